"""Deterministic synthetic calibration hierarchies, plus adversarial tampering.

A hierarchy is a tree of devices: one root device calibrated directly by
the root-of-trust organisation, ``levels`` levels below it with branching
``round(n ** (1 / levels))``, and exactly ``n_devices`` field devices as
leaves.  Organisations are assigned to levels round-robin, one technician
each.  Generation is fully seeded: the same spec always produces the same
state digest.

The generator returns a key escrow alongside the registry so tests can
forge and corrupt; escrowed keys never enter contract state.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

from .clock import Clock
from .contract import CalibrationRegistry, CalibrationReport
from .errors import InfeasibleSpecError, InvalidInputError, NotFoundError
from .identity import KeyPair, Signature, generate_keypair, make_certificate, self_signed_root, sign

GEN_EPOCH = 1_700_000_000
GEN_VALIDITY_S = 10 * 365 * 24 * 3600
DEFAULT_ROOT_ORG_ID = "NPL"
DEFAULT_ROOT_ORG_NAME = "National Physical Laboratory"

TAMPER_MODES = ("corrupt_parent_sig", "corrupt_tech_sig", "orphan_parent", "revoke", "fake_root_org")


@dataclass(frozen=True)
class HierarchySpec:
    """Parameters for one synthetic hierarchy; ``n_devices`` counts the leaves."""

    n_devices: int
    levels: int
    n_orgs: int
    seed: int
    signatures_enabled: bool = True

    def __post_init__(self) -> None:
        if self.n_devices < 1:
            raise InvalidInputError("n_devices must be >= 1")
        if self.levels < 1:
            raise InvalidInputError("levels must be >= 1")
        if self.n_orgs < 1:
            raise InvalidInputError("n_orgs must be >= 1")

    def to_json(self) -> dict:
        return {
            "levels": self.levels,
            "n_devices": self.n_devices,
            "n_orgs": self.n_orgs,
            "seed": self.seed,
            "signatures_enabled": self.signatures_enabled,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HierarchySpec":
        n = int(obj["n_devices"])
        return cls(
            n_devices=n,
            levels=int(obj["levels"]) if obj.get("levels") is not None else derive_levels(n),
            n_orgs=int(obj["n_orgs"]) if obj.get("n_orgs") is not None else derive_orgs(n),
            seed=int(obj.get("seed", 0)),
            signatures_enabled=bool(obj.get("signatures_enabled", True)),
        )


def derive_levels(n: int) -> int:
    """Hierarchy depth for n field devices: one level per decimal order of magnitude."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if n < 10:
        return 1
    return len(str(int(n))) - 1


def derive_orgs(n: int, literal_log2: bool = False) -> int:
    """Organisation count for n field devices.

    The default doubles the level count (100 devices -> 4 organisations).
    ``literal_log2`` instead uses round(log2(n - 1)), which gives ~7 for
    100 devices; both conventions appear in the source material, and the
    default follows the worked example.
    """
    if literal_log2:
        if n < 2:
            raise InvalidInputError("literal formula needs n >= 2")
        return max(1, round(math.log2(n - 1)))
    return 2 * derive_levels(n)


def default_spec(n: int, seed: int = 0, signatures_enabled: bool = True) -> HierarchySpec:
    return HierarchySpec(
        n_devices=n,
        levels=derive_levels(n),
        n_orgs=derive_orgs(n),
        seed=seed,
        signatures_enabled=signatures_enabled,
    )


def branching_factor(spec: HierarchySpec) -> int:
    return max(1, round(spec.n_devices ** (1.0 / spec.levels)))


@dataclass
class KeyEscrow:
    """Test-only private keys for everything in a generated hierarchy."""

    nmi: KeyPair
    organisations: dict[str, KeyPair] = field(default_factory=dict)
    technicians: dict[str, KeyPair] = field(default_factory=dict)
    devices: dict[str, KeyPair] = field(default_factory=dict)


@dataclass
class GeneratedHierarchy:
    spec: HierarchySpec
    registry: CalibrationRegistry
    escrow: KeyEscrow
    devices_by_depth: list[list[str]]
    org_ids: list[str]

    @property
    def root_device(self) -> str:
        return self.devices_by_depth[0][0]

    @property
    def leaves(self) -> list[str]:
        return self.devices_by_depth[-1]

    @property
    def all_devices(self) -> list[str]:
        return [d for depth in self.devices_by_depth for d in depth]


def _entity_seed(spec_seed: int, entity_id: str) -> bytes:
    return hashlib.sha256(f"caltrace:{spec_seed}:{entity_id}".encode("utf-8")).digest()


def generate_hierarchy(
    spec: HierarchySpec,
    *,
    root_org_id: str = DEFAULT_ROOT_ORG_ID,
    root_org_name: str = DEFAULT_ROOT_ORG_NAME,
    nmi_keypair: Optional[KeyPair] = None,
    clock: Optional[Clock] = None,
) -> GeneratedHierarchy:
    """Build a registry populated with a full calibration hierarchy.

    Feasibility requires the requested depth to admit a branching tree:
    for two or more leaves, levels must not exceed log2(n_devices).  A
    single leaf always generates as a one-wide path, which is how deep
    level-scaling fixtures are built.
    """
    n, levels = spec.n_devices, spec.levels
    if n >= 2 and levels > math.log2(n):
        raise InfeasibleSpecError(
            f"{levels} levels cannot branch over {n} leaves (max {math.log2(n):.2f})"
        )
    b = branching_factor(spec)

    if nmi_keypair is None:
        nmi_keypair = generate_keypair(_entity_seed(spec.seed, f"nmi:{root_org_id}"))
    escrow = KeyEscrow(nmi=nmi_keypair)
    registry = CalibrationRegistry(
        root_org_id=root_org_id,
        root_org_name=root_org_name,
        root_certificate=self_signed_root(root_org_id, nmi_keypair),
        clock=clock,
        signature_checks=spec.signatures_enabled,
    )

    org_ids = [f"org-{i + 1}" for i in range(spec.n_orgs)]
    for org_id in org_ids:
        key = generate_keypair(_entity_seed(spec.seed, f"org:{org_id}"))
        escrow.organisations[org_id] = key
        cert = make_certificate(org_id, "organisation", key.public_key, root_org_id, nmi_keypair)
        registry.create_organisation(org_id, f"Calibration Lab {org_id}", cert, 1)

    def add_technician(tech_id: str, org_id: str, org_key: KeyPair) -> None:
        key = generate_keypair(_entity_seed(spec.seed, f"tech:{tech_id}"))
        escrow.technicians[tech_id] = key
        cert = make_certificate(tech_id, "technician", key.public_key, org_id, org_key)
        registry.create_technician(tech_id, key.address, org_id, cert)

    root_tech = f"tech-{root_org_id}"
    add_technician(root_tech, root_org_id, nmi_keypair)
    for org_id in org_ids:
        add_technician(f"tech-{org_id}", org_id, escrow.organisations[org_id])

    def tech_for_depth(depth: int) -> str:
        if depth == 0:
            return root_tech
        return f"tech-{org_ids[(depth - 1) % len(org_ids)]}"

    # Tree shape: depth 0 is the single root device, interior depths carry
    # b^depth devices, and the leaf depth carries exactly n devices spread
    # round-robin over the deepest interior level.
    counts = [1] + [b**d for d in range(1, levels)] + [n]
    devices_by_depth: list[list[str]] = []
    for depth, count in enumerate(counts):
        devices_by_depth.append([f"dev-{depth}-{i}" for i in range(count)])

    def make_report(device_id: str, depth: int, parent_id: str) -> None:
        key = generate_keypair(_entity_seed(spec.seed, f"dev:{device_id}"))
        escrow.devices[device_id] = key
        tech_id = tech_for_depth(depth)
        report = CalibrationReport(
            report_id=f"rep-{device_id}",
            device_id=device_id,
            parent_device_id=parent_id,
            technician_id=tech_id,
            issued_at=GEN_EPOCH,
            valid_until=GEN_EPOCH + GEN_VALIDITY_S,
            range_min=0.0,
            range_max=100.0,
            unit="degC",
            measurement_uncertainty=round(0.01 * (depth + 1), 6),
            device_public_key=key.public_key,
            integrity_level=depth + 1,
            parent_signature=None,
            technician_signature=None,
        )
        if spec.signatures_enabled:
            payload = report.signing_bytes()
            if parent_id:
                report.parent_signature = sign(payload, escrow.devices[parent_id])
            report.technician_signature = sign(payload, escrow.technicians[tech_id])
        registry.create_report(report)

    make_report(devices_by_depth[0][0], 0, "")
    for depth in range(1, len(counts)):
        parents = devices_by_depth[depth - 1]
        for i, device_id in enumerate(devices_by_depth[depth]):
            make_report(device_id, depth, parents[i % len(parents)])

    return GeneratedHierarchy(
        spec=spec,
        registry=registry,
        escrow=escrow,
        devices_by_depth=devices_by_depth,
        org_ids=org_ids,
    )


def children_map(registry: CalibrationRegistry) -> dict[str, list[str]]:
    """Parent -> children edges over current reports."""
    children: dict[str, list[str]] = {}
    for device_id in registry.device_ids():
        report = registry.current_report(device_id)
        if report is not None and report.parent_device_id:
            children.setdefault(report.parent_device_id, []).append(device_id)
    return children


def descendants(registry: CalibrationRegistry, device_id: str, include_self: bool = True) -> set[str]:
    """All devices at or below *device_id* in the calibration tree."""
    edges = children_map(registry)
    out: set[str] = set()
    stack = [device_id]
    while stack:
        node = stack.pop()
        if node in out:
            continue
        out.add(node)
        stack.extend(edges.get(node, ()))
    if not include_self:
        out.discard(device_id)
    return out


def _flip_signature(sig: Signature) -> Signature:
    raw = bytearray(sig.bytes)
    raw[0] ^= 0x01
    return Signature(bytes=bytes(raw), signer_key_id=sig.signer_key_id)


def tamper(hierarchy: GeneratedHierarchy, target: str, mode: str) -> set[str]:
    """Apply one adversarial mutation; returns the affected subtree's device ids.

    *target* may name a device or a report.  ``corrupt_parent_sig`` and
    ``corrupt_tech_sig`` flip a signature byte; ``orphan_parent`` deletes
    the target's parent's report history; ``revoke`` revokes the target's
    current report through the normal authorisation path; ``fake_root_org``
    re-roots the target's chain under a rogue (but root-certified)
    organisation, flipping write-validity without breaking the read walk.
    """
    registry = hierarchy.registry
    report = registry.report(target)
    device_id = report.device_id if report is not None else target
    current = registry.current_report(device_id)
    if current is None:
        raise NotFoundError(f"unknown device or report {target!r}")
    if mode not in TAMPER_MODES:
        raise InvalidInputError(f"unknown tamper mode {mode!r}")

    if mode == "corrupt_parent_sig":
        if current.parent_signature is None:
            raise InvalidInputError("target report carries no parent signature")
        current.parent_signature = _flip_signature(current.parent_signature)
        return descendants(registry, device_id)

    if mode == "corrupt_tech_sig":
        if current.technician_signature is None:
            raise InvalidInputError("target report carries no technician signature")
        current.technician_signature = _flip_signature(current.technician_signature)
        return descendants(registry, device_id)

    if mode == "orphan_parent":
        if not current.parent_device_id:
            raise InvalidInputError("target report has no parent to orphan")
        parent_id = current.parent_device_id
        affected = descendants(registry, parent_id)
        for rep in registry.report_history(parent_id):
            registry._reports_by_id.pop(rep.report_id, None)
        registry._device_reports.pop(parent_id, None)
        return affected

    if mode == "revoke":
        registry.revoke_report(current.report_id, registry.root_org_id)
        return descendants(registry, device_id)

    # fake_root_org: climb to the chain's root device and supersede its
    # report with one certified by a rogue organisation.  The rogue org's
    # certificate still chains to the root of trust, so reads keep
    # verifying; only the NMI identity check on writes fails.
    top = current
    for _ in range(registry.max_chain_hops):
        if not top.parent_device_id:
            break
        parent = registry.current_report(top.parent_device_id)
        if parent is None:
            break
        top = parent
    rogue_index = sum(1 for org in registry.organisations if org.startswith("org-rogue-")) + 1
    rogue_org = f"org-rogue-{rogue_index}"
    rogue_tech = f"tech-{rogue_org}"
    org_key = generate_keypair(_entity_seed(hierarchy.spec.seed, f"org:{rogue_org}"))
    tech_key = generate_keypair(_entity_seed(hierarchy.spec.seed, f"tech:{rogue_tech}"))
    hierarchy.escrow.organisations[rogue_org] = org_key
    hierarchy.escrow.technicians[rogue_tech] = tech_key
    registry.create_organisation(
        rogue_org,
        f"Rogue Lab {rogue_index}",
        make_certificate(
            rogue_org, "organisation", org_key.public_key, registry.root_org_id, hierarchy.escrow.nmi
        ),
        1,
    )
    registry.create_technician(
        rogue_tech,
        tech_key.address,
        rogue_org,
        make_certificate(rogue_tech, "technician", tech_key.public_key, rogue_org, org_key),
    )
    replacement = CalibrationReport(
        report_id=f"{top.report_id}-rogue-{rogue_index}",
        device_id=top.device_id,
        parent_device_id="",
        technician_id=rogue_tech,
        issued_at=top.issued_at,
        valid_until=top.valid_until,
        range_min=top.range_min,
        range_max=top.range_max,
        unit=top.unit,
        measurement_uncertainty=top.measurement_uncertainty,
        device_public_key=top.device_public_key,
        integrity_level=1,
        parent_signature=None,
        technician_signature=None,
    )
    if hierarchy.spec.signatures_enabled:
        replacement.technician_signature = sign(replacement.signing_bytes(), tech_key)
    registry.create_report(replacement)
    return descendants(registry, top.device_id)


def export_bundle(hierarchy: GeneratedHierarchy) -> dict:
    """JSON bundle of everything needed to replay the hierarchy elsewhere."""
    registry = hierarchy.registry
    return {
        "spec": hierarchy.spec.to_json(),
        "root": {
            "org_id": registry.root_org_id,
            "name": registry.organisations[registry.root_org_id].name,
            "certificate": registry.root_certificate.to_json(),
        },
        "organisations": [
            org.to_json()
            for org_id, org in registry.organisations.items()
            if org_id != registry.root_org_id
        ],
        "technicians": [t.to_json() for t in registry.technicians.values()],
        "reports": [r.to_json() for r in registry.reports_in_order()],
    }


def bundle_calls(bundle: dict) -> list[tuple[str, dict]]:
    """Flatten a bundle into (function, args) write calls in replayable order."""
    calls: list[tuple[str, dict]] = []
    for org in bundle["organisations"]:
        calls.append(
            (
                "createOrganisation",
                {
                    "org_id": org["org_id"],
                    "name": org["name"],
                    "certificate": org["certificate"],
                    "integrity_level": org["integrity_level"],
                },
            )
        )
    for tech in bundle["technicians"]:
        calls.append(
            (
                "createTechnician",
                {
                    "tech_id": tech["tech_id"],
                    "account_address": tech["account_address"],
                    "org_id": tech["org_id"],
                    "certificate": tech["certificate"],
                },
            )
        )
    for report in bundle["reports"]:
        calls.append(("createReport", {"report": report}))
    return calls
