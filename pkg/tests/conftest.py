"""Shared fixtures: a hand-built registry scaffold and common keys."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import pytest

from caltrace.clock import FixedClock
from caltrace.contract import CalibrationRegistry, CalibrationReport
from caltrace.identity import KeyPair, generate_keypair, make_certificate, self_signed_root, sign

T0 = 1_700_000_000
YEAR = 365 * 24 * 3600


@dataclass
class Scaffold:
    """A registry plus every private key, built step by step by tests."""

    registry: CalibrationRegistry
    clock: FixedClock
    nmi_key: KeyPair
    keys: dict[str, KeyPair]

    def _key(self, entity_id: str) -> KeyPair:
        if entity_id not in self.keys:
            self.keys[entity_id] = generate_keypair(f"scaffold:{entity_id}".ljust(32).encode())
        return self.keys[entity_id]

    def add_org(self, org_id: str, issuer: Optional[str] = None, level: int = 1,
                issuer_key: Optional[KeyPair] = None) -> KeyPair:
        issuer = issuer or self.registry.root_org_id
        key = self._key(org_id)
        signer = issuer_key or (self.nmi_key if issuer == self.registry.root_org_id else self._key(issuer))
        cert = make_certificate(org_id, "organisation", key.public_key, issuer, signer)
        self.registry.create_organisation(org_id, f"Lab {org_id}", cert, level)
        return key

    def add_tech(self, tech_id: str, org_id: str, org_key: Optional[KeyPair] = None) -> KeyPair:
        key = self._key(tech_id)
        signer = org_key or (self.nmi_key if org_id == self.registry.root_org_id else self._key(org_id))
        cert = make_certificate(tech_id, "technician", key.public_key, org_id, signer)
        self.registry.create_technician(tech_id, key.address, org_id, cert)
        return key

    def build_report(self, device: str, tech: str, parent: str = "", level: Optional[int] = None,
                     report_id: Optional[str] = None, issued_at: Optional[int] = None,
                     valid_for: int = YEAR, sign_parent: bool = True, sign_tech: bool = True,
                     uncertainty: float = 0.05) -> CalibrationReport:
        """Construct (but do not register) a fully signed report."""
        device_key = self._key(device)
        if level is None:
            if parent:
                parent_report = self.registry.current_report(parent)
                level = parent_report.integrity_level + 1 if parent_report else 2
            else:
                level = 1
        issued = issued_at if issued_at is not None else self.clock.now()
        report = CalibrationReport(
            report_id=report_id or f"rep-{device}",
            device_id=device,
            parent_device_id=parent,
            technician_id=tech,
            issued_at=issued,
            valid_until=issued + valid_for,
            range_min=-40.0,
            range_max=125.0,
            unit="degC",
            measurement_uncertainty=uncertainty,
            device_public_key=device_key.public_key,
            integrity_level=level,
            parent_signature=None,
            technician_signature=None,
        )
        payload = report.signing_bytes()
        if parent and sign_parent:
            report.parent_signature = sign(payload, self._key(parent))
        if sign_tech:
            report.technician_signature = sign(payload, self._key(tech))
        return report

    def add_device(self, device: str, tech: str, parent: str = "", **kwargs) -> CalibrationReport:
        report = self.build_report(device, tech, parent, **kwargs)
        self.registry.create_report(report)
        return report

    def add_chain(self, depth: int, tech: str, prefix: str = "d") -> list[str]:
        """A path of *depth* devices under the root org's technician."""
        devices = [f"{prefix}{i}" for i in range(depth)]
        self.add_device(devices[0], tech)
        for parent, child in zip(devices, devices[1:]):
            self.add_device(child, tech, parent=parent)
        return devices


@pytest.fixture
def clock() -> FixedClock:
    return FixedClock(T0)


@pytest.fixture
def scaffold(clock) -> Scaffold:
    nmi_key = generate_keypair(b"scaffold:nmi-root-of-trust-seed!")
    registry = CalibrationRegistry(
        root_org_id="NPL",
        root_org_name="National Physical Laboratory",
        root_certificate=self_signed_root("NPL", nmi_key),
        clock=clock,
    )
    return Scaffold(registry=registry, clock=clock, nmi_key=nmi_key, keys={"NPL": nmi_key})


@pytest.fixture
def basic_chain(scaffold) -> Scaffold:
    """NMI -> lab org -> technician, root device + two levels below."""
    scaffold.add_tech("tech-npl", "NPL")
    scaffold.add_org("acme", level=1)
    scaffold.add_tech("tech-acme", "acme")
    scaffold.add_device("ref0", "tech-npl")
    scaffold.add_device("mid1", "tech-acme", parent="ref0")
    scaffold.add_device("leaf2", "tech-acme", parent="mid1")
    return scaffold
