"""Independent brute-force reference checker for trace validity.

Deliberately naive: collects the whole parent path first, then re-checks
every rule in open code: freshness, parent signatures, technician
signatures, technician certificates, and an explicit certificate walk to
the root.  No memoisation, no shared helpers with the registry's own walk
beyond the raw signature primitive.
"""

from __future__ import annotations

from typing import Optional

from caltrace.contract import CalibrationRegistry, CalibrationReport
from caltrace.identity import verify


def _latest_fresh(reg: CalibrationRegistry, device_id: str, now: int) -> Optional[CalibrationReport]:
    history = reg.report_history(device_id)
    if not history:
        return None
    report = history[-1]
    if report.revoked or report.valid_until < now:
        return None
    return report


def _cert_chain_to_root(reg: CalibrationRegistry, org_id: str, check_sigs: bool) -> bool:
    root = reg.root_certificate
    cert = reg.certificates.get(org_id)
    seen: set[str] = set()
    hops = 0
    while cert is not None and hops <= 64:
        if cert.subject_id in seen:
            return False
        seen.add(cert.subject_id)
        if cert.subject_kind != "organisation":
            return False
        issuer = reg.certificates.get(cert.issuer_id)
        if issuer is None:
            return False
        if check_sigs and not verify(cert.signing_payload(), cert.issuer_signature, issuer.public_key):
            return False
        if cert.issuer_id == cert.subject_id:
            return cert.subject_id == root.subject_id and cert.public_key == root.public_key
        cert = issuer
        hops += 1
    return False


def _technician_ok(reg: CalibrationRegistry, tech_id: str, check_sigs: bool) -> bool:
    tech = reg.technicians.get(tech_id)
    if tech is None:
        return False
    org = reg.organisations.get(tech.org_id)
    if org is None:
        return False
    if check_sigs and not verify(
        tech.certificate.signing_payload(), tech.certificate.issuer_signature, org.certificate.public_key
    ):
        return False
    return _cert_chain_to_root(reg, org.org_id, check_sigs)


def oracle_read(reg: CalibrationRegistry, device_id: str, now: Optional[int] = None) -> Optional[CalibrationReport]:
    """Reference result for trace verification: root report or None."""
    now = reg.clock.now() if now is None else now
    check_sigs = reg.signature_checks

    path: list[CalibrationReport] = []
    seen: set[str] = set()
    device = device_id
    while True:
        if device in seen or len(path) > reg.max_chain_hops:
            return None
        seen.add(device)
        report = _latest_fresh(reg, device, now)
        if report is None:
            return None
        path.append(report)
        if not report.parent_device_id:
            break
        device = report.parent_device_id

    for i, report in enumerate(path):
        if report.parent_device_id:
            parent = path[i + 1]
            if check_sigs and not verify(
                report.signing_bytes(), report.parent_signature, parent.device_public_key
            ):
                return None
        if not _technician_ok(reg, report.technician_id, check_sigs):
            return None
        if check_sigs:
            tech = reg.technicians[report.technician_id]
            if not verify(
                report.signing_bytes(), report.technician_signature, tech.certificate.public_key
            ):
                return None
    return path[-1]


def oracle_write(reg: CalibrationRegistry, device_id: str) -> Optional[tuple[bool, bool]]:
    """Reference (trace_complete, valid_report) pair; None for unknown devices."""
    if not reg.report_history(device_id):
        return None
    root_report = oracle_read(reg, device_id)
    valid = False
    if root_report is not None:
        tech = reg.technicians.get(root_report.technician_id)
        valid = tech is not None and tech.org_id == reg.root_org_id
    return True, valid


def oracle_descendants(reg: CalibrationRegistry, device_id: str) -> set[str]:
    """Subtree device ids via exhaustive edge scan, including the device itself."""
    edges: dict[str, set[str]] = {}
    for child in reg.device_ids():
        history = reg.report_history(child)
        if history and history[-1].parent_device_id:
            edges.setdefault(history[-1].parent_device_id, set()).add(child)
    out: set[str] = set()
    frontier = [device_id]
    while frontier:
        node = frontier.pop()
        if node in out:
            continue
        out.add(node)
        frontier.extend(edges.get(node, ()))
    return out
