"""Calibration registry: organisations, technicians, reports, and traces.

This is the state machine the ledger executes transactions against.  It
enforces three families of rules:

* admission control — every organisation and technician enters with a
  certificate that must chain to the pinned root-of-trust;
* report integrity — a calibration report must carry a valid signature
  from the parent device and from a certified technician, and must sit
  exactly one integrity level below its parent (downward flow only);
* trace verification — walking a device's calibration chain re-checks
  every signature and certificate on the path and returns the root report,
  or null if anything fails.

Reads never mutate state and require no caller identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from .canonical import canonical_bytes, sha256_hex, to_iso8601
from .clock import Clock, SystemClock
from .errors import (
    AlreadyExistsError,
    AlreadyRevokedError,
    BrokenChainError,
    ForbiddenError,
    ForgedParentError,
    ForgedTechnicianError,
    InvalidInputError,
    LevelViolationError,
    NotFoundError,
    UnknownCallError,
    UnknownOrganisationError,
    UnknownTechnicianError,
    UntrustedCertificateError,
)
from .identity import (
    MAX_CHAIN_HOPS,
    CertificateRecord,
    CertificateStore,
    Signature,
    verify,
    verify_chain_of_trust,
)

MAX_ID_LENGTH = 64
MAX_NAME_LENGTH = 128

# Functions that mutate state (gas-metered) vs. free anonymous reads.
WRITE_FUNCTIONS = (
    "createOrganisation",
    "createTechnician",
    "createReport",
    "revokeReport",
    "traceCalWrite",
)
READ_FUNCTIONS = (
    "traceCalRead",
    "getParentReport",
    "getOrgName",
    "getTechnicianOrganisation",
)


def _check_id(value: Any, label: str) -> str:
    if not isinstance(value, str) or not value or len(value) > MAX_ID_LENGTH:
        raise InvalidInputError(f"{label} must be a non-empty string of at most {MAX_ID_LENGTH} chars")
    return value


def _is_address(value: Any) -> bool:
    if not isinstance(value, str) or len(value) != 40:
        return False
    try:
        int(value, 16)
    except ValueError:
        return False
    return value == value.lower()


@dataclass
class Organisation:
    org_id: str
    name: str
    certificate: CertificateRecord
    integrity_level: int

    def to_json(self) -> dict:
        return {
            "certificate": self.certificate.to_json(),
            "integrity_level": self.integrity_level,
            "name": self.name,
            "org_id": self.org_id,
        }


@dataclass
class Technician:
    tech_id: str
    account_address: str
    org_id: str
    certificate: CertificateRecord

    def to_json(self) -> dict:
        return {
            "account_address": self.account_address,
            "certificate": self.certificate.to_json(),
            "org_id": self.org_id,
            "tech_id": self.tech_id,
        }


@dataclass
class CalibrationReport:
    """One calibration event for a device.

    The report carries the device's own public key, so a device's report
    doubles as its certificate: children prove lineage by a signature that
    verifies under the parent report's key.  Root reports (calibrated
    directly against national standards) have an empty ``parent_device_id``
    and no parent signature.
    """

    report_id: str
    device_id: str
    parent_device_id: str
    technician_id: str
    issued_at: int
    valid_until: int
    range_min: float
    range_max: float
    unit: str
    measurement_uncertainty: float
    device_public_key: bytes
    integrity_level: int
    parent_signature: Optional[Signature]
    technician_signature: Optional[Signature]
    revoked: bool = False

    def signing_payload(self) -> dict:
        return {
            "device_id": self.device_id,
            "device_public_key": self.device_public_key.hex(),
            "integrity_level": self.integrity_level,
            "issued_at": to_iso8601(self.issued_at),
            "measurement_uncertainty": self.measurement_uncertainty,
            "operating_range": {"max": self.range_max, "min": self.range_min},
            "parent_device_id": self.parent_device_id,
            "report_id": self.report_id,
            "technician_id": self.technician_id,
            "unit": self.unit,
            "valid_until": to_iso8601(self.valid_until),
        }

    def signing_bytes(self) -> bytes:
        return canonical_bytes(self.signing_payload())

    def to_json(self) -> dict:
        obj = self.signing_payload()
        obj["parent_signature"] = self.parent_signature.to_json() if self.parent_signature else None
        obj["technician_signature"] = (
            self.technician_signature.to_json() if self.technician_signature else None
        )
        obj["revoked"] = self.revoked
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CalibrationReport":
        from .canonical import from_iso8601

        rng = obj["operating_range"]
        return cls(
            report_id=obj["report_id"],
            device_id=obj["device_id"],
            parent_device_id=obj["parent_device_id"],
            technician_id=obj["technician_id"],
            issued_at=from_iso8601(obj["issued_at"]),
            valid_until=from_iso8601(obj["valid_until"]),
            range_min=float(rng["min"]),
            range_max=float(rng["max"]),
            unit=obj["unit"],
            measurement_uncertainty=float(obj["measurement_uncertainty"]),
            device_public_key=bytes.fromhex(obj["device_public_key"]),
            integrity_level=int(obj["integrity_level"]),
            parent_signature=(
                Signature.from_json(obj["parent_signature"]) if obj.get("parent_signature") else None
            ),
            technician_signature=(
                Signature.from_json(obj["technician_signature"])
                if obj.get("technician_signature")
                else None
            ),
            revoked=bool(obj.get("revoked", False)),
        )


@dataclass
class TraceRecord:
    """Outcome of an on-chain trace verification for one device."""

    device_id: str
    trace_complete: bool
    valid_report: bool
    verified_at: int

    def to_json(self) -> dict:
        return {
            "device_id": self.device_id,
            "trace_complete": self.trace_complete,
            "valid_report": self.valid_report,
            "verified_at": self.verified_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TraceRecord":
        return cls(
            device_id=obj["device_id"],
            trace_complete=bool(obj["trace_complete"]),
            valid_report=bool(obj["valid_report"]),
            verified_at=int(obj["verified_at"]),
        )


class CalibrationRegistry:
    """Contract state plus the rules that admit changes to it.

    ``signature_checks=False`` keeps every structural rule (existence,
    levels, chain shape) but skips all cryptographic verification; it
    exists so benchmarks can measure the walk without the crypto.
    ``strict_alg1=True`` makes the trace walk reuse the leaf technician's
    certificate for every ancestor instead of resolving each ancestor's
    own technician; only single-technician chains verify in that mode.
    """

    def __init__(
        self,
        root_org_id: str,
        root_org_name: str,
        root_certificate: CertificateRecord,
        clock: Optional[Clock] = None,
        signature_checks: bool = True,
        strict_alg1: bool = False,
        max_chain_hops: int = MAX_CHAIN_HOPS,
    ):
        if root_certificate.subject_kind != "organisation":
            raise InvalidInputError("root certificate must name an organisation")
        if root_certificate.issuer_id != root_certificate.subject_id:
            raise InvalidInputError("root certificate must be self-signed")
        if root_certificate.subject_id != root_org_id:
            raise InvalidInputError("root certificate subject must match the root org id")
        self.root_org_id = root_org_id
        self.root_certificate = root_certificate
        self.clock: Clock = clock if clock is not None else SystemClock()
        self.signature_checks = bool(signature_checks)
        self.strict_alg1 = bool(strict_alg1)
        self.max_chain_hops = int(max_chain_hops)

        self.certificates = CertificateStore()
        self.certificates.add(root_certificate)
        self.organisations: dict[str, Organisation] = {
            root_org_id: Organisation(root_org_id, root_org_name, root_certificate, 0)
        }
        self.technicians: dict[str, Technician] = {}
        self._device_reports: dict[str, list[CalibrationReport]] = {}
        self._reports_by_id: dict[str, CalibrationReport] = {}
        self.traces: dict[str, TraceRecord] = {}

    # -- write operations ---------------------------------------------------

    def create_organisation(
        self, org_id: str, name: str, certificate: CertificateRecord, integrity_level: int
    ) -> None:
        _check_id(org_id, "org_id")
        if not isinstance(name, str) or not name or len(name) > MAX_NAME_LENGTH:
            raise InvalidInputError("name must be a non-empty string")
        if not isinstance(integrity_level, int) or integrity_level < 0:
            raise InvalidInputError("integrity_level must be a non-negative integer")
        if org_id in self.organisations:
            raise AlreadyExistsError(f"organisation {org_id!r} already exists")
        if certificate.subject_id != org_id or certificate.subject_kind != "organisation":
            raise UntrustedCertificateError("certificate does not name this organisation")
        if certificate.issuer_id not in self.organisations:
            raise UntrustedCertificateError("issuer is not a registered organisation")
        self.certificates.add(certificate)
        if not self._chain_ok(certificate):
            self.certificates.remove(org_id)
            raise UntrustedCertificateError("certificate does not chain to the root of trust")
        self.organisations[org_id] = Organisation(org_id, name, certificate, integrity_level)

    def create_technician(
        self, tech_id: str, account_address: str, org_id: str, certificate: CertificateRecord
    ) -> None:
        _check_id(tech_id, "tech_id")
        if not _is_address(account_address):
            raise InvalidInputError("account_address must be 40 lowercase hex chars")
        if org_id not in self.organisations:
            raise UnknownOrganisationError(f"unknown organisation {org_id!r}")
        if tech_id in self.technicians:
            raise AlreadyExistsError(f"technician {tech_id!r} already exists")
        if certificate.subject_id != tech_id or certificate.subject_kind != "technician":
            raise UntrustedCertificateError("certificate does not name this technician")
        if certificate.issuer_id != org_id:
            raise UntrustedCertificateError("certificate was not issued by the stated organisation")
        self.certificates.add(certificate)
        if not self._chain_ok(certificate):
            self.certificates.remove(tech_id)
            raise UntrustedCertificateError("certificate does not chain to the root of trust")
        self.technicians[tech_id] = Technician(tech_id, account_address, org_id, certificate)

    def create_report(self, report: CalibrationReport) -> None:
        _check_id(report.report_id, "report_id")
        _check_id(report.device_id, "device_id")
        if report.report_id in self._reports_by_id:
            raise AlreadyExistsError(f"report {report.report_id!r} already exists")
        if report.valid_until <= report.issued_at:
            raise InvalidInputError("valid_until must be after issued_at")
        if not (report.range_min < report.range_max):
            raise InvalidInputError("operating range must satisfy min < max")
        if report.measurement_uncertainty < 0:
            raise InvalidInputError("measurement_uncertainty must be non-negative")
        if not isinstance(report.device_public_key, bytes) or len(report.device_public_key) != 33:
            raise InvalidInputError("device_public_key must be 33 compressed-point bytes")
        technician = self.technicians.get(report.technician_id)
        if technician is None:
            raise UnknownTechnicianError(f"unknown technician {report.technician_id!r}")

        if report.parent_device_id:
            parent = self._current_report(report.parent_device_id)
            if parent is None:
                raise BrokenChainError(f"parent device {report.parent_device_id!r} has no report")
            if report.integrity_level != parent.integrity_level + 1:
                raise LevelViolationError(
                    f"child level must be {parent.integrity_level + 1}, got {report.integrity_level}"
                )
            if self.signature_checks:
                if report.parent_signature is None or not verify(
                    report.signing_bytes(), report.parent_signature, parent.device_public_key
                ):
                    raise ForgedParentError("parent signature missing or invalid")
        else:
            if report.integrity_level != 1:
                raise LevelViolationError("root reports must sit at integrity level 1")
            if report.parent_signature is not None:
                raise InvalidInputError("root reports carry no parent signature")

        if self.signature_checks:
            if report.technician_signature is None or not verify(
                report.signing_bytes(), report.technician_signature, technician.certificate.public_key
            ):
                raise ForgedTechnicianError("technician signature missing or invalid")

        self._reports_by_id[report.report_id] = report
        self._device_reports.setdefault(report.device_id, []).append(report)

    def revoke_report(self, report_id: str, revoker_org_id: str) -> None:
        report = self._reports_by_id.get(report_id)
        if report is None:
            raise NotFoundError(f"unknown report {report_id!r}")
        if report.revoked:
            raise AlreadyRevokedError(f"report {report_id!r} is already revoked")
        if revoker_org_id not in self.organisations:
            raise UnknownOrganisationError(f"unknown organisation {revoker_org_id!r}")
        technician = self.technicians.get(report.technician_id)
        issuing_org = technician.org_id if technician else None
        if not self._org_is_self_or_ancestor(revoker_org_id, issuing_org):
            raise ForbiddenError("revoker is not the issuing organisation or an ancestor of it")
        report.revoked = True

    def record_trace(self, device_id: str, sender: str, verified_at: int) -> TraceRecord:
        """Run a full trace verification and persist the outcome.

        The device must be known.  The trace is complete once the walk has
        been performed; the report is valid only if the walk succeeded and
        the root report was certified by the root-of-trust organisation.
        """
        if not _is_address(sender):
            raise InvalidInputError("sender must be a 40-hex account address")
        if device_id not in self._device_reports:
            raise NotFoundError(f"unknown device {device_id!r}")
        root_report = self.trace_cal_read(device_id)
        valid = False
        if root_report is not None:
            technician = self.technicians.get(root_report.technician_id)
            valid = technician is not None and technician.org_id == self.root_org_id
        record = TraceRecord(
            device_id=device_id,
            trace_complete=True,
            valid_report=valid,
            verified_at=int(verified_at),
        )
        self.traces[device_id] = record
        return record

    # -- read operations ----------------------------------------------------

    def trace_cal_read(self, device_id: str) -> Optional[CalibrationReport]:
        """Walk the calibration chain from *device_id* to its root report.

        Each step checks freshness (not revoked, not expired), the child's
        signature under the parent device key, and the certifying
        technician: signature over the report, certificate issued by a
        registered organisation, organisation chaining to the root of
        trust.  Any failure yields None.  Certificate checks are memoised
        per walk, never across calls.
        """
        now = self.clock.now()
        leaf = self._fresh_report(device_id, now)
        if leaf is None:
            return None
        leaf_technician = self.technicians.get(leaf.technician_id)
        if leaf_technician is None:
            return None
        org_ok: dict[str, bool] = {}
        tech_ok: dict[str, bool] = {}
        seen: set[str] = set()

        current = leaf
        for _ in range(self.max_chain_hops + 1):
            if current.device_id in seen:
                return None
            seen.add(current.device_id)

            parent: Optional[CalibrationReport] = None
            if current.parent_device_id:
                parent = self._fresh_report(current.parent_device_id, now)
                if parent is None:
                    return None
                if not self._sig_ok(
                    current.signing_bytes(), current.parent_signature, parent.device_public_key
                ):
                    return None

            if self.strict_alg1:
                if not self._sig_ok(
                    current.signing_bytes(),
                    current.technician_signature,
                    leaf_technician.certificate.public_key,
                ):
                    return None
                if current is leaf and not self._technician_trusted(leaf_technician, org_ok):
                    return None
            else:
                technician = self.technicians.get(current.technician_id)
                if technician is None:
                    return None
                cached = tech_ok.get(technician.tech_id)
                if cached is None:
                    cached = self._technician_trusted(technician, org_ok)
                    tech_ok[technician.tech_id] = cached
                if not cached:
                    return None
                if not self._sig_ok(
                    current.signing_bytes(),
                    current.technician_signature,
                    technician.certificate.public_key,
                ):
                    return None

            if parent is None:
                return current
            current = parent
        return None

    def get_parent_report(self, device_id: str) -> Optional[CalibrationReport]:
        report = self._current_report(device_id)
        if report is None or not report.parent_device_id:
            return None
        return self._current_report(report.parent_device_id)

    def get_org_name(self, org_id: str) -> Optional[str]:
        org = self.organisations.get(org_id)
        return org.name if org else None

    def get_technician_organisation(self, tech_id: str) -> Optional[str]:
        technician = self.technicians.get(tech_id)
        return technician.org_id if technician else None

    def current_report(self, device_id: str) -> Optional[CalibrationReport]:
        return self._current_report(device_id)

    def report(self, report_id: str) -> Optional[CalibrationReport]:
        return self._reports_by_id.get(report_id)

    def report_history(self, device_id: str) -> list[CalibrationReport]:
        return list(self._device_reports.get(device_id, ()))

    def device_ids(self) -> list[str]:
        return sorted(self._device_reports)

    def reports_in_order(self) -> list[CalibrationReport]:
        """All reports in creation order (parents precede children)."""
        return list(self._reports_by_id.values())

    def state_digest(self) -> str:
        """Digest of the full persisted state; equal digests mean equal state."""
        state = {
            "organisations": [
                self.organisations[k].to_json() for k in sorted(self.organisations)
            ],
            "technicians": [self.technicians[k].to_json() for k in sorted(self.technicians)],
            "reports": [
                [r.to_json() for r in self._device_reports[d]]
                for d in sorted(self._device_reports)
            ],
            "traces": {k: self.traces[k].to_json() for k in sorted(self.traces)},
        }
        return sha256_hex(canonical_bytes(state))

    # -- transaction dispatch -----------------------------------------------

    def execute_write(self, function: str, args: dict, sender: str, block_index: int) -> Any:
        """Apply a write call with JSON args; returns the call's result value."""
        try:
            if function == "createOrganisation":
                self.create_organisation(
                    args["org_id"],
                    args["name"],
                    CertificateRecord.from_json(args["certificate"]),
                    int(args["integrity_level"]),
                )
                return None
            if function == "createTechnician":
                self.create_technician(
                    args["tech_id"],
                    args["account_address"],
                    args["org_id"],
                    CertificateRecord.from_json(args["certificate"]),
                )
                return None
            if function == "createReport":
                self.create_report(CalibrationReport.from_json(args["report"]))
                return None
            if function == "revokeReport":
                self.revoke_report(args["report_id"], args["revoker_org_id"])
                return None
            if function == "traceCalWrite":
                return self.record_trace(args["device_id"], sender, block_index).to_json()
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed arguments for {function}: {exc}") from exc
        raise UnknownCallError(f"not a write function: {function!r}")

    def execute_read(self, function: str, args: dict) -> Any:
        """Apply a read call with JSON args; never mutates state."""
        args = args or {}
        try:
            if function == "traceCalRead":
                report = self.trace_cal_read(args["device_id"])
                return report.to_json() if report else None
            if function == "getParentReport":
                report = self.get_parent_report(args["device_id"])
                return report.to_json() if report else None
            if function == "getOrgName":
                return self.get_org_name(args["org_id"])
            if function == "getTechnicianOrganisation":
                return self.get_technician_organisation(args["tech_id"])
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed arguments for {function}: {exc}") from exc
        raise UnknownCallError(f"not a read function: {function!r}")

    # -- internals ------------------------------------------------------------

    def _current_report(self, device_id: str) -> Optional[CalibrationReport]:
        history = self._device_reports.get(device_id)
        return history[-1] if history else None

    def _fresh_report(self, device_id: str, now: int) -> Optional[CalibrationReport]:
        report = self._current_report(device_id)
        if report is None or report.revoked or report.valid_until < now:
            return None
        return report

    def _sig_ok(self, message: bytes, signature: Optional[Signature], public_key: bytes) -> bool:
        if not self.signature_checks:
            return True
        if signature is None:
            return False
        return verify(message, signature, public_key)

    def _chain_ok(self, certificate: CertificateRecord) -> bool:
        return verify_chain_of_trust(
            certificate,
            self.root_certificate,
            self.certificates,
            max_hops=self.max_chain_hops,
            check_signatures=self.signature_checks,
        )

    def _technician_trusted(self, technician: Technician, org_ok: dict[str, bool]) -> bool:
        """Organisation-side checks for a technician's certificate."""
        org = self.organisations.get(technician.org_id)
        if org is None:
            return False
        if self.signature_checks and not verify(
            technician.certificate.signing_payload(),
            technician.certificate.issuer_signature,
            org.certificate.public_key,
        ):
            return False
        cached = org_ok.get(org.org_id)
        if cached is None:
            cached = self._chain_ok(org.certificate)
            org_ok[org.org_id] = cached
        return cached

    def _org_is_self_or_ancestor(self, candidate_org_id: str, org_id: Optional[str]) -> bool:
        """True when *candidate_org_id* is *org_id* or sits above it in the cert chain."""
        if org_id is None:
            return False
        current = org_id
        for _ in range(self.max_chain_hops + 1):
            if current == candidate_org_id:
                return True
            cert = self.certificates.get(current)
            if cert is None or cert.issuer_id == current:
                return False
            current = cert.issuer_id
        return False
