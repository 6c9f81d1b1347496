"""Command-line interface.

One chain file per deployment, newline-delimited JSON, guarded by a file
lock for mutating commands.  Reads never take the lock and never open the
file for writing.  Mutating subcommands mine their transaction into a
block immediately unless ``--queue`` defers it, so a follow-up read in a
fresh process sees the change.

Exit codes: 0 success / verified; 1 verification failed or operation
rejected; 2 usage error; 3 chain integrity error.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click
from filelock import FileLock, Timeout

from . import bench as bench_mod
from . import economics as econ_mod
from .clock import Clock, FixedClock, SystemClock
from .contract import CalibrationReport
from .errors import CalTraceError, ChainIntegrityError
from .hierarchy import (
    HierarchySpec,
    bundle_calls,
    derive_levels,
    derive_orgs,
    export_bundle,
    generate_hierarchy,
)
from .identity import KeyPair, generate_keypair, keypair_from_scalar_hex, make_certificate, sign
from .ledger import Call, Ledger, LedgerConfig, load_ledger, validate_chain_file

DEFAULT_CHAIN = "caltrace-chain.ndjson"
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3


class InvalidResult(click.ClickException):
    exit_code = EXIT_INVALID


class IntegrityError(click.ClickException):
    exit_code = EXIT_INTEGRITY


@dataclass
class CliConfig:
    chain_path: Path
    output_format: str
    clock: Clock
    seed: Optional[int]
    lock_timeout: float

    @property
    def keystore_path(self) -> Path:
        return self.chain_path.with_name(self.chain_path.name + ".keys.json")

    @property
    def lock_path(self) -> Path:
        return self.chain_path.with_name(self.chain_path.name + ".lock")


def _parse_clock(mode: str) -> Clock:
    if mode == "real":
        return SystemClock()
    if mode.startswith("fixed:"):
        try:
            return FixedClock(int(mode.split(":", 1)[1]))
        except ValueError:
            raise click.UsageError("clock must be 'real' or 'fixed:<unix-timestamp>'")
    raise click.UsageError("clock must be 'real' or 'fixed:<unix-timestamp>'")


@click.group()
@click.option(
    "--chain",
    "chain_path",
    envvar="CALTRACE_CHAIN",
    default=DEFAULT_CHAIN,
    show_default=True,
    type=click.Path(path_type=Path),
    help="Chain file path (env: CALTRACE_CHAIN).",
)
@click.option(
    "--output",
    "output_format",
    type=click.Choice(["text", "json"]),
    default="text",
    show_default=True,
)
@click.option("--clock", "clock_mode", default="real", show_default=True, help="real | fixed:<ts>")
@click.option("--seed", type=int, default=None, help="Deterministic key generation seed.")
@click.option("--lock-timeout", type=float, default=10.0, show_default=True)
@click.pass_context
def main(ctx, chain_path: Path, output_format: str, clock_mode: str, seed, lock_timeout: float):
    """Calibration-traceability chain: registry, trace verification, benchmarks."""
    ctx.obj = CliConfig(
        chain_path=chain_path,
        output_format=output_format,
        clock=_parse_clock(clock_mode),
        seed=seed,
        lock_timeout=lock_timeout,
    )


pass_config = click.make_pass_decorator(CliConfig)


def _emit(cfg: CliConfig, document: dict, text: str) -> None:
    if cfg.output_format == "json":
        click.echo(json.dumps(document, sort_keys=True))
    else:
        click.echo(text)


# -- keystore ----------------------------------------------------------------


def _load_keystore(cfg: CliConfig) -> dict[str, str]:
    if cfg.keystore_path.exists():
        return json.loads(cfg.keystore_path.read_text(encoding="utf-8"))
    return {}


def _save_keystore(cfg: CliConfig, store: dict[str, str]) -> None:
    cfg.keystore_path.write_text(
        json.dumps(store, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _require_key(cfg: CliConfig, entity_id: str) -> KeyPair:
    store = _load_keystore(cfg)
    if entity_id not in store:
        raise click.UsageError(f"no key for {entity_id!r} in {cfg.keystore_path}")
    return keypair_from_scalar_hex(store[entity_id])


def _new_key(cfg: CliConfig, entity_id: str) -> KeyPair:
    store = _load_keystore(cfg)
    if entity_id in store:
        return keypair_from_scalar_hex(store[entity_id])
    if cfg.seed is not None:
        key = generate_keypair(f"caltrace-cli:{cfg.seed}:{entity_id}".encode("utf-8"))
    else:
        key = generate_keypair()
    store[entity_id] = key.private_scalar_hex()
    _save_keystore(cfg, store)
    return key


# -- ledger plumbing -----------------------------------------------------------


def _open_ledger(cfg: CliConfig) -> Ledger:
    if not cfg.chain_path.exists():
        raise click.UsageError(f"no chain at {cfg.chain_path}; run 'caltrace init' first")
    try:
        return load_ledger(cfg.chain_path, clock=cfg.clock)
    except ChainIntegrityError as exc:
        raise IntegrityError(str(exc))


def _lock(cfg: CliConfig) -> FileLock:
    return FileLock(str(cfg.lock_path), timeout=cfg.lock_timeout)


def _submit_and_mine(cfg: CliConfig, call: Call, sender: str, queue: bool) -> dict:
    """Submit one write; mine it unless queued.  Returns an outcome document."""
    try:
        with _lock(cfg):
            ledger = _open_ledger(cfg)
            tx_id = ledger.submit_transaction(call, sender)
            if queue:
                return {"tx_id": tx_id, "status": "pending", "block": None, "result": None}
            block = ledger.mine_pending()
            tx = next(t for t in block.transactions if t.tx_id == tx_id)
            result = None
            if call.function == "traceCalWrite" and tx.status == "ok":
                result = ledger.registry.traces[call.args["device_id"]].to_json()
            return {
                "tx_id": tx_id,
                "status": tx.status,
                "block": block.index,
                "result": result,
            }
    except Timeout:
        raise InvalidResult(f"another process holds the chain lock at {cfg.lock_path}")
    except CalTraceError as exc:
        raise InvalidResult(f"{exc.code}: {exc}")


def _check_committed(doc: dict) -> None:
    if doc["status"] not in ("ok", "pending"):
        raise InvalidResult(f"transaction rejected with {doc['status']}")


# -- chain lifecycle -----------------------------------------------------------


@main.command()
@click.option("--nmi-id", default="NPL", show_default=True)
@click.option("--nmi-name", default="National Physical Laboratory", show_default=True)
@click.option("--difficulty", type=int, default=12, show_default=True)
@click.option("--gas-limit", type=int, default=8_000_000, show_default=True)
@click.option("--interval", type=int, default=15, show_default=True)
@click.option("--no-signature-checks", is_flag=True, help="Skip all signature verification.")
@click.option("--strict-alg1", is_flag=True,
              help="Reuse the leaf technician's certificate for every ancestor.")
@click.option("--force", is_flag=True, help="Overwrite an existing chain.")
@pass_config
def init(cfg: CliConfig, nmi_id, nmi_name, difficulty, gas_limit, interval,
         no_signature_checks, strict_alg1, force):
    """Create a chain with the root-of-trust organisation at genesis."""
    if cfg.chain_path.exists() and not force:
        raise click.UsageError(f"{cfg.chain_path} already exists (use --force to overwrite)")
    config = LedgerConfig(
        block_gas_limit=gas_limit,
        target_block_interval=interval,
        difficulty_bits=difficulty,
        signature_checks=not no_signature_checks,
        strict_alg1=strict_alg1,
    )
    with _lock(cfg):
        nmi_key = _new_key(cfg, nmi_id)
        ledger = Ledger(
            config,
            clock=cfg.clock,
            path=cfg.chain_path,
            root_org_id=nmi_id,
            root_org_name=nmi_name,
            nmi_keypair=nmi_key,
        )
    doc = {
        "chain": str(cfg.chain_path),
        "root_org": nmi_id,
        "genesis_hash": ledger.head.block_hash,
        "difficulty_bits": difficulty,
    }
    _emit(cfg, doc, f"initialised {cfg.chain_path} (root org {nmi_id}, genesis {ledger.head.block_hash[:16]}...)")


@main.command("mine")
@pass_config
def mine_cmd(cfg: CliConfig):
    """Assemble, mine, and append all pending transactions."""
    try:
        with _lock(cfg):
            ledger = _open_ledger(cfg)
            if not ledger.mempool:
                _emit(cfg, {"mined": None, "message": "no pending transactions"}, "no pending transactions")
                return
            block = ledger.mine_pending()
    except Timeout:
        raise InvalidResult("another process holds the chain lock")
    doc = {
        "mined": block.index,
        "transactions": len(block.transactions),
        "gas_used": block.gas_used,
        "block_hash": block.block_hash,
    }
    _emit(cfg, doc, f"mined block {block.index}: {len(block.transactions)} tx, {block.gas_used} gas")


@main.group()
def chain():
    """Chain inspection."""


@chain.command("validate")
@pass_config
def chain_validate(cfg: CliConfig):
    """Re-derive every hash in the chain file; exit 3 on any mismatch."""
    ok, bad = validate_chain_file(cfg.chain_path)
    if ok:
        _emit(cfg, {"valid": True, "first_bad_block": None}, "VALID")
    else:
        if cfg.output_format == "json":
            click.echo(json.dumps({"valid": False, "first_bad_block": bad}, sort_keys=True))
        else:
            click.echo(f"INVALID at block {bad}")
        sys.exit(EXIT_INTEGRITY)


# -- registry mutations -------------------------------------------------------


@main.group()
def org():
    """Organisation registry."""


@org.command("create")
@click.argument("org_id")
@click.option("--name", required=True)
@click.option("--issuer", default="NPL", show_default=True, help="Issuing organisation id.")
@click.option("--level", type=int, default=1, show_default=True)
@click.option("--sender", default=None, help="Defaults to the issuer key's address.")
@click.option("--queue", is_flag=True, help="Leave the transaction in the mempool.")
@pass_config
def org_create(cfg: CliConfig, org_id, name, issuer, level, sender, queue):
    """Register an organisation under an existing issuer."""
    issuer_key = _require_key(cfg, issuer)
    org_key = _new_key(cfg, org_id)
    cert = make_certificate(org_id, "organisation", org_key.public_key, issuer, issuer_key)
    call = Call(
        "createOrganisation",
        {"org_id": org_id, "name": name, "certificate": cert.to_json(), "integrity_level": level},
    )
    doc = _submit_and_mine(cfg, call, sender or issuer_key.address, queue)
    _check_committed(doc)
    _emit(cfg, doc, f"org {org_id} created (tx {doc['tx_id'][:16]}..., block {doc['block']})")


@main.group()
def tech():
    """Technician registry."""


@tech.command("create")
@click.argument("tech_id")
@click.option("--org", "org_id", required=True)
@click.option("--address", default=None, help="Account address; derived from the new key by default.")
@click.option("--sender", default=None)
@click.option("--queue", is_flag=True)
@pass_config
def tech_create(cfg: CliConfig, tech_id, org_id, address, sender, queue):
    """Register a technician certified by an organisation."""
    org_key = _require_key(cfg, org_id)
    tech_key = _new_key(cfg, tech_id)
    cert = make_certificate(tech_id, "technician", tech_key.public_key, org_id, org_key)
    call = Call(
        "createTechnician",
        {
            "tech_id": tech_id,
            "account_address": address or tech_key.address,
            "org_id": org_id,
            "certificate": cert.to_json(),
        },
    )
    doc = _submit_and_mine(cfg, call, sender or org_key.address, queue)
    _check_committed(doc)
    _emit(cfg, doc, f"tech {tech_id} created (tx {doc['tx_id'][:16]}..., block {doc['block']})")


@main.group()
def report():
    """Calibration reports."""


@report.command("create")
@click.option("--device", required=True)
@click.option("--parent", default="", help="Parent device id; omit for a root report.")
@click.option("--technician", required=True)
@click.option("--report-id", default=None)
@click.option("--range-min", type=float, default=0.0, show_default=True)
@click.option("--range-max", type=float, default=100.0, show_default=True)
@click.option("--unit", default="degC", show_default=True)
@click.option("--uncertainty", type=float, default=0.01, show_default=True)
@click.option("--issued-at", type=int, default=None, help="Unix timestamp; defaults to now.")
@click.option("--valid-days", type=int, default=366, show_default=True)
@click.option("--sender", default=None, help="Defaults to the technician key's address.")
@click.option("--queue", is_flag=True)
@pass_config
def report_create(cfg: CliConfig, device, parent, technician, report_id, range_min, range_max,
                  unit, uncertainty, issued_at, valid_days, sender, queue):
    """Create and sign a calibration report for a device."""
    tech_key = _require_key(cfg, technician)
    device_key = _new_key(cfg, device)
    ledger = _open_ledger(cfg)
    level = 1
    if parent:
        parent_report = ledger.registry.current_report(parent)
        if parent_report is None:
            raise InvalidResult(f"parent device {parent!r} has no report")
        level = parent_report.integrity_level + 1
    issued = issued_at if issued_at is not None else cfg.clock.now()
    rep = CalibrationReport(
        report_id=report_id or f"rep-{device}-{issued}",
        device_id=device,
        parent_device_id=parent,
        technician_id=technician,
        issued_at=issued,
        valid_until=issued + valid_days * 86_400,
        range_min=range_min,
        range_max=range_max,
        unit=unit,
        measurement_uncertainty=uncertainty,
        device_public_key=device_key.public_key,
        integrity_level=level,
        parent_signature=None,
        technician_signature=None,
    )
    payload = rep.signing_bytes()
    if parent:
        rep.parent_signature = sign(payload, _require_key(cfg, parent))
    rep.technician_signature = sign(payload, tech_key)
    call = Call("createReport", {"report": rep.to_json()})
    doc = _submit_and_mine(cfg, call, sender or tech_key.address, queue)
    _check_committed(doc)
    doc["report_id"] = rep.report_id
    _emit(cfg, doc, f"report {rep.report_id} committed (block {doc['block']})")


@report.command("revoke")
@click.argument("report_id")
@click.option("--revoker", required=True, help="Revoking organisation id.")
@click.option("--sender", default=None)
@click.option("--queue", is_flag=True)
@pass_config
def report_revoke(cfg: CliConfig, report_id, revoker, sender, queue):
    """Revoke a report (issuing organisation or an ancestor of it)."""
    if sender is None:
        sender = _require_key(cfg, revoker).address
    call = Call("revokeReport", {"report_id": report_id, "revoker_org_id": revoker})
    doc = _submit_and_mine(cfg, call, sender, queue)
    _check_committed(doc)
    _emit(cfg, doc, f"report {report_id} revoked (block {doc['block']})")


# -- trace verification ---------------------------------------------------------


@main.group()
def trace():
    """Trace verification."""


@trace.command("read")
@click.argument("device")
@pass_config
def trace_read(cfg: CliConfig, device):
    """Walk the calibration chain; print the root report or INVALID (exit 1)."""
    ledger = _open_ledger(cfg)
    result = ledger.read_state("traceCalRead", {"device_id": device})
    if result is None:
        if cfg.output_format == "json":
            click.echo(json.dumps({"valid": False, "root_report": None}, sort_keys=True))
        else:
            click.echo("INVALID")
        sys.exit(EXIT_INVALID)
    _emit(cfg, {"valid": True, "root_report": result}, json.dumps(result, indent=2, sort_keys=True))


@trace.command("write")
@click.argument("device")
@click.option("--sender", required=True, help="Account address paying for the write.")
@click.option("--queue", is_flag=True)
@pass_config
def trace_write(cfg: CliConfig, device, sender, queue):
    """Run trace verification on-chain and persist the outcome."""
    call = Call("traceCalWrite", {"device_id": device})
    doc = _submit_and_mine(cfg, call, sender, queue)
    _check_committed(doc)
    record = doc.get("result")
    text = json.dumps(record, indent=2, sort_keys=True) if record else f"queued (tx {doc['tx_id']})"
    _emit(cfg, doc, text)
    if record is not None and not record["valid_report"]:
        sys.exit(EXIT_INVALID)


# -- hierarchy generation ---------------------------------------------------------


@main.group()
def hierarchy():
    """Synthetic hierarchies."""


@hierarchy.command("generate")
@click.option("--spec", "spec_file", type=click.Path(exists=True, path_type=Path), default=None,
              help="JSON file with n_devices/levels/n_orgs/seed/signatures_enabled.")
@click.option("--devices", type=int, default=None, help="Leaf count (alternative to --spec).")
@click.option("--levels", type=int, default=None)
@click.option("--orgs", type=int, default=None)
@click.option("--gen-seed", type=int, default=0, show_default=True)
@click.option("--unsigned", is_flag=True, help="Generate without report signatures.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write the JSON bundle here.")
@click.option("--commit", is_flag=True, help="Replay the bundle into this chain as transactions.")
@pass_config
def hierarchy_generate(cfg: CliConfig, spec_file, devices, levels, orgs, gen_seed, unsigned, out, commit):
    """Generate a deterministic synthetic hierarchy; optionally commit it."""
    if spec_file is not None:
        spec = HierarchySpec.from_json(json.loads(spec_file.read_text(encoding="utf-8")))
    elif devices is not None:
        spec = HierarchySpec(
            n_devices=devices,
            levels=levels if levels is not None else derive_levels(devices),
            n_orgs=orgs if orgs is not None else derive_orgs(devices),
            seed=gen_seed,
            signatures_enabled=not unsigned,
        )
    else:
        raise click.UsageError("provide --spec FILE or --devices N")
    try:
        if commit:
            with _lock(cfg):
                ledger = _open_ledger(cfg)
                nmi_key = _require_key(cfg, ledger.registry.root_org_id)
                generated = generate_hierarchy(
                    spec,
                    root_org_id=ledger.registry.root_org_id,
                    root_org_name=ledger.registry.organisations[ledger.registry.root_org_id].name,
                    nmi_keypair=nmi_key,
                )
                bundle = export_bundle(generated)
                sender = nmi_key.address
                blocks = 0
                for function, args in bundle_calls(bundle):
                    ledger.submit_transaction(Call(function, args), sender)
                while ledger.mempool:
                    block = ledger.mine_pending()
                    blocks += 1
                    rejected = [t for t in block.transactions if t.status != "ok"]
                    if rejected:
                        raise InvalidResult(
                            f"{len(rejected)} generated transactions rejected: {rejected[0].status}"
                        )
        else:
            generated = generate_hierarchy(spec)
            bundle = export_bundle(generated)
            blocks = 0
    except Timeout:
        raise InvalidResult("another process holds the chain lock")
    except CalTraceError as exc:
        raise InvalidResult(f"{exc.code}: {exc}")
    if out is not None:
        out.write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    doc = {
        "n_devices": spec.n_devices,
        "levels": spec.levels,
        "n_orgs": spec.n_orgs,
        "total_devices": len(generated.all_devices),
        "leaves": len(generated.leaves),
        "bundle": str(out) if out else None,
        "committed_blocks": blocks if commit else 0,
        "state_digest": generated.registry.state_digest(),
    }
    _emit(
        cfg,
        doc,
        f"generated {doc['total_devices']} devices ({doc['leaves']} leaves, "
        f"{spec.levels} levels); digest {doc['state_digest'][:16]}...",
    )


# -- benchmarks -------------------------------------------------------------------


def _parse_int_list(text: str) -> list[int]:
    """Accept '10,100,1000' or '5:50:5' range syntax."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) != 3:
                raise click.UsageError("range syntax is start:stop:step")
            start, stop, step = parts
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise click.UsageError(f"not an integer list: {text!r}")


def _bench_common(cfg: CliConfig, records, out: Optional[Path], fmt: str) -> None:
    violations = bench_mod.check_invariants(records)
    if out is not None:
        bench_mod.emit_results(records, fmt, out)
    if cfg.output_format == "json":
        click.echo(
            json.dumps(
                {"records": [r.to_json() for r in records], "violations": violations},
                sort_keys=True,
            )
        )
    else:
        header = f"{'n':>8} {'levels':>6} {'sigs':>5} {'trials':>6} {'mean_us':>12} {'median_us':>12} {'p95_us':>12}"
        click.echo(header)
        for r in records:
            if r.skipped:
                click.echo(f"{r.n_devices:>8} {r.levels:>6} {str(r.signatures_enabled):>5} skipped")
                continue
            click.echo(
                f"{r.n_devices:>8} {r.levels:>6} {str(r.signatures_enabled):>5} {r.trials:>6}"
                f" {r.mean_exec_us:>12.2f} {r.median_exec_us:>12.2f} {r.p95_exec_us:>12.2f}"
            )
        for v in violations:
            click.echo(f"violation: {v}", err=True)
    if violations:
        sys.exit(EXIT_INVALID)


@main.group(name="bench")
def bench_group():
    """Scaling benchmarks."""


@bench_group.command("devices")
@click.option("--n", "n_text", default="10,100,1000", show_default=True)
@click.option("--signatures", type=click.Choice(["both", "on", "off"]), default="both", show_default=True)
@click.option("--trials", type=int, default=30, show_default=True)
@click.option("--bench-seed", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "plotdata"]), default="csv",
              show_default=True)
@pass_config
def bench_devices(cfg: CliConfig, n_text, signatures, trials, bench_seed, out, fmt):
    """Trace time vs. number of field devices."""
    try:
        records = bench_mod.run_device_scaling(
            _parse_int_list(n_text), signatures, trials, seed=bench_seed, clock=cfg.clock
        )
    except CalTraceError as exc:
        raise click.UsageError(str(exc))
    _bench_common(cfg, records, out, fmt)


@bench_group.command("levels")
@click.option("--levels", "levels_text", default="5:50:5", show_default=True)
@click.option("--signatures", type=click.Choice(["both", "on", "off"]), default="both", show_default=True)
@click.option("--trials", type=int, default=30, show_default=True)
@click.option("--bench-seed", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "plotdata"]), default="csv",
              show_default=True)
@pass_config
def bench_levels(cfg: CliConfig, levels_text, signatures, trials, bench_seed, out, fmt):
    """Trace time vs. hierarchy depth (single-path fixtures)."""
    try:
        records = bench_mod.run_level_scaling(
            _parse_int_list(levels_text), signatures, trials, seed=bench_seed, clock=cfg.clock
        )
    except CalTraceError as exc:
        raise click.UsageError(str(exc))
    _bench_common(cfg, records, out, fmt)


# -- economics ----------------------------------------------------------------------


@main.command()
@click.option("--write-gas", type=int, default=200_000, show_default=True)
@click.option("--gas-limit", type=int, default=8_000_000, show_default=True)
@click.option("--interval", type=float, default=15.0, show_default=True)
@click.option("--checks-per-day", type=int, default=24, show_default=True)
@click.option("--daily-override", type=int, default=4_000_000, show_default=True,
              help="Assumed daily gas per device; pass 0 to use the computed product.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of the text table.")
@pass_config
def econ(cfg: CliConfig, write_gas, gas_limit, interval, checks_per_day, daily_override, as_csv):
    """Throughput model: devices per block and writes per day."""
    try:
        params = econ_mod.EconParams(
            write_gas=write_gas,
            block_gas_limit=gas_limit,
            block_interval_s=interval,
            checks_per_device_per_day=checks_per_day,
            daily_gas_per_device_override=daily_override if daily_override > 0 else None,
        )
    except CalTraceError as exc:
        raise click.UsageError(str(exc))
    doc = econ_mod.summary(params)
    if cfg.output_format == "json":
        click.echo(json.dumps(doc, sort_keys=True))
        return
    if as_csv:
        click.echo("quantity,value")
        for k in sorted(doc):
            click.echo(f"{k},{doc[k]}")
        return
    width = max(len(k) for k in doc)
    for k in ("daily_gas_per_device", "devices_per_block", "writes_per_day", "per_block_write_capacity"):
        click.echo(f"{k:<{width}}  {doc[k]:>12,}")


if __name__ == "__main__":
    main()
