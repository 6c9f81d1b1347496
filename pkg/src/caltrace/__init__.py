"""Tamper-evident calibration-traceability infrastructure.

A proof-of-work hash chain carries gas-metered transactions against a
calibration registry: organisations and technicians enter under a
certificate chain anchored at a national root of trust, calibration
reports link devices to their parents with dual signatures, and trace
verification walks any device's chain back to the root.  Companion
modules generate synthetic hierarchies, benchmark verification scaling,
and model chain throughput.
"""

from .bench import BenchRecord, check_invariants, emit_results, fit_linear, run_device_scaling, run_level_scaling, spearman_rho
from .clock import FixedClock, SystemClock
from .contract import CalibrationRegistry, CalibrationReport, Organisation, Technician, TraceRecord
from .economics import EconParams, daily_gas_per_device, devices_per_block, per_block_write_capacity, writes_per_day
from .errors import CalTraceError
from .hierarchy import GeneratedHierarchy, HierarchySpec, derive_levels, derive_orgs, generate_hierarchy, tamper
from .identity import CertificateRecord, CertificateStore, KeyPair, Signature, generate_keypair, make_certificate, self_signed_root, sign, verify, verify_chain_of_trust
from .ledger import Block, Call, Ledger, LedgerConfig, Transaction, load_ledger, validate_chain_file

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "Block",
    "CalTraceError",
    "CalibrationRegistry",
    "CalibrationReport",
    "Call",
    "CertificateRecord",
    "CertificateStore",
    "EconParams",
    "FixedClock",
    "GeneratedHierarchy",
    "HierarchySpec",
    "KeyPair",
    "Ledger",
    "LedgerConfig",
    "Organisation",
    "Signature",
    "SystemClock",
    "Technician",
    "TraceRecord",
    "Transaction",
    "check_invariants",
    "daily_gas_per_device",
    "derive_levels",
    "derive_orgs",
    "devices_per_block",
    "emit_results",
    "fit_linear",
    "generate_hierarchy",
    "generate_keypair",
    "load_ledger",
    "make_certificate",
    "per_block_write_capacity",
    "run_device_scaling",
    "run_level_scaling",
    "self_signed_root",
    "sign",
    "spearman_rho",
    "tamper",
    "validate_chain_file",
    "verify",
    "verify_chain_of_trust",
    "writes_per_day",
]
