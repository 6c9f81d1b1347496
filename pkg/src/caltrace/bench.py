"""Scaling benchmarks for trace verification.

Two experiments: execution time of ``trace_cal_read`` against the number
of field devices, and against hierarchy depth, each with signature
verification on and off.  Timing brackets only the verification call;
warm-up trials are discarded and the garbage collector is paused during
measurement.  Mining never appears in these numbers.
"""

from __future__ import annotations

import csv
import gc
import json
import random
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .clock import Clock, SystemClock
from .contract import CalibrationRegistry
from .errors import IllConditionedError, InvalidInputError
from .hierarchy import HierarchySpec, derive_levels, derive_orgs, generate_hierarchy

CSV_COLUMNS = [
    "n_devices",
    "levels",
    "signatures_enabled",
    "trials",
    "mean_exec_us",
    "median_exec_us",
    "p95_exec_us",
    "timestamp",
    "skipped",
]

MIN_TRIALS = 10
WARMUP_TRIALS = 3
MAX_LEVELS = 64
LEVEL_SCALING_ORGS = 2


@dataclass
class BenchRecord:
    n_devices: int
    levels: int
    signatures_enabled: bool
    trials: int
    mean_exec_us: float
    median_exec_us: float
    p95_exec_us: float
    timestamp: int
    skipped: bool = False

    def to_json(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}

    @classmethod
    def from_json(cls, obj: dict) -> "BenchRecord":
        return cls(
            n_devices=int(obj["n_devices"]),
            levels=int(obj["levels"]),
            signatures_enabled=_parse_bool(obj["signatures_enabled"]),
            trials=int(obj["trials"]),
            mean_exec_us=float(obj["mean_exec_us"]),
            median_exec_us=float(obj["median_exec_us"]),
            p95_exec_us=float(obj["p95_exec_us"]),
            timestamp=int(obj["timestamp"]),
            skipped=_parse_bool(obj["skipped"]),
        )


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("true", "1", "yes")


def _p95(samples: Sequence[float]) -> float:
    if len(samples) == 1:
        return samples[0]
    return statistics.quantiles(samples, n=20, method="inclusive")[18]


def time_trace(registry: CalibrationRegistry, device_id: str, trials: int) -> list[float]:
    """Per-trial wall time of trace_cal_read, in microseconds.

    The target must actually verify; benchmarking a failing walk would
    silently time an early exit.
    """
    for _ in range(WARMUP_TRIALS):
        if registry.trace_cal_read(device_id) is None:
            raise InvalidInputError(f"benchmark target {device_id!r} does not verify")
    samples: list[float] = []
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(trials):
            start = time.perf_counter_ns()
            registry.trace_cal_read(device_id)
            samples.append((time.perf_counter_ns() - start) / 1000.0)
    finally:
        if gc_was_enabled:
            gc.enable()
    return samples


def _record(spec: HierarchySpec, samples: list[float], ts: int) -> BenchRecord:
    return BenchRecord(
        n_devices=spec.n_devices,
        levels=spec.levels,
        signatures_enabled=spec.signatures_enabled,
        trials=len(samples),
        mean_exec_us=statistics.fmean(samples),
        median_exec_us=statistics.median(samples),
        p95_exec_us=_p95(samples),
        timestamp=ts,
    )


def _modes(signatures: str) -> list[bool]:
    table = {"both": [True, False], "on": [True], "off": [False]}
    if signatures not in table:
        raise InvalidInputError("signatures must be one of: both, on, off")
    return table[signatures]


def run_device_scaling(
    n_list: Sequence[int],
    signatures: str = "both",
    trials: int = 30,
    seed: int = 1,
    clock: Optional[Clock] = None,
) -> list[BenchRecord]:
    """Time trace verification on one uniformly sampled leaf per hierarchy size."""
    clock = clock or SystemClock()
    if trials < MIN_TRIALS:
        raise InvalidInputError(f"trials must be >= {MIN_TRIALS}")
    if not n_list or any(n < 10 for n in n_list):
        raise InvalidInputError("every n must be >= 10")
    records: list[BenchRecord] = []
    for n in n_list:
        for sigs in _modes(signatures):
            spec = HierarchySpec(
                n_devices=n,
                levels=derive_levels(n),
                n_orgs=derive_orgs(n),
                seed=seed,
                signatures_enabled=sigs,
            )
            try:
                hierarchy = generate_hierarchy(spec)
            except MemoryError:
                records.append(
                    BenchRecord(
                        n_devices=n,
                        levels=spec.levels,
                        signatures_enabled=sigs,
                        trials=0,
                        mean_exec_us=0.0,
                        median_exec_us=0.0,
                        p95_exec_us=0.0,
                        timestamp=clock.now(),
                        skipped=True,
                    )
                )
                continue
            leaf = random.Random(seed + n).choice(hierarchy.leaves)
            samples = time_trace(hierarchy.registry, leaf, trials)
            records.append(_record(spec, samples, clock.now()))
    return records


def run_level_scaling(
    levels_list: Sequence[int],
    signatures: str = "both",
    trials: int = 30,
    seed: int = 1,
    clock: Optional[Clock] = None,
) -> list[BenchRecord]:
    """Time trace verification on the deepest leaf of single-path hierarchies."""
    clock = clock or SystemClock()
    if trials < MIN_TRIALS:
        raise InvalidInputError(f"trials must be >= {MIN_TRIALS}")
    if not levels_list or any(lv < 1 or lv > MAX_LEVELS for lv in levels_list):
        raise InvalidInputError(f"levels must be in [1, {MAX_LEVELS}]")
    records: list[BenchRecord] = []
    for levels in levels_list:
        for sigs in _modes(signatures):
            spec = HierarchySpec(
                n_devices=1,
                levels=levels,
                n_orgs=LEVEL_SCALING_ORGS,
                seed=seed,
                signatures_enabled=sigs,
            )
            hierarchy = generate_hierarchy(spec)
            deepest = hierarchy.leaves[0]
            samples = time_trace(hierarchy.registry, deepest, trials)
            records.append(_record(spec, samples, clock.now()))
    return records


def fit_linear(records: Sequence[BenchRecord]) -> tuple[float, float, float]:
    """OLS of mean execution time on level count: (slope, intercept, r_squared).

    Requires at least four usable records that differ only in level count;
    a series without level variation cannot be fit.
    """
    usable = [r for r in records if not r.skipped]
    if len(usable) < 4:
        raise IllConditionedError("need at least 4 records")
    if len({(r.n_devices, r.signatures_enabled) for r in usable}) != 1:
        raise IllConditionedError("records must vary only in levels")
    xs = [float(r.levels) for r in usable]
    ys = [r.mean_exec_us for r in usable]
    if len(set(xs)) < 2:
        raise IllConditionedError("all records share one level; nothing to fit")
    slope, intercept = statistics.linear_regression(xs, ys)
    ss_tot = sum((y - statistics.fmean(ys)) ** 2 for y in ys)
    if ss_tot == 0.0:
        return slope, intercept, 1.0
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    return slope, intercept, 1.0 - ss_res / ss_tot


def _ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise InvalidInputError("need two equal-length series of length >= 2")
    rx, ry = _ranks(xs), _ranks(ys)
    try:
        return statistics.correlation(rx, ry)
    except statistics.StatisticsError:
        return 0.0


def check_invariants(records: Sequence[BenchRecord]) -> list[str]:
    """Violations of the documented benchmark guarantees; empty means clean."""
    problems: list[str] = []
    usable = [r for r in records if not r.skipped]
    for r in usable:
        if r.trials < MIN_TRIALS:
            problems.append(f"(n={r.n_devices}, levels={r.levels}): trials {r.trials} < {MIN_TRIALS}")
        if r.mean_exec_us > r.p95_exec_us:
            problems.append(
                f"(n={r.n_devices}, levels={r.levels}, sigs={r.signatures_enabled}): mean exceeds p95"
            )
    by_point: dict[tuple[int, int], dict[bool, BenchRecord]] = {}
    for r in usable:
        by_point.setdefault((r.n_devices, r.levels), {})[r.signatures_enabled] = r
    for (n, levels), pair in sorted(by_point.items()):
        if True in pair and False in pair and pair[True].mean_exec_us < pair[False].mean_exec_us:
            problems.append(f"(n={n}, levels={levels}): sigs-on mean below sigs-off mean")
    for sigs in (True, False):
        series = sorted(
            (r for r in usable if r.signatures_enabled == sigs and r.n_devices == 1),
            key=lambda r: r.levels,
        )
        if len({r.levels for r in series}) < len(series):
            continue
        for prev, cur in zip(series, series[1:]):
            if cur.mean_exec_us < prev.mean_exec_us * 0.95:
                problems.append(
                    f"levels {prev.levels}->{cur.levels} (sigs={sigs}): time fell more than 5%"
                )
        if len(series) >= 8:
            rho = spearman_rho([r.levels for r in series], [r.mean_exec_us for r in series])
            if rho < 0.9:
                problems.append(f"level series (sigs={sigs}): Spearman rho {rho:.3f} < 0.9")
        if len(series) >= 4:
            try:
                _, _, r2 = fit_linear(series)
                if r2 < 0.9:
                    problems.append(f"level series (sigs={sigs}): r^2 {r2:.3f} < 0.9")
            except IllConditionedError:
                pass
    return problems


def emit_results(records: Sequence[BenchRecord], format: str, path: Path) -> Path:
    """Write records to *path* as csv, json, or plotdata columns."""
    if not records:
        raise InvalidInputError("no records to emit")
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for r in records:
                writer.writerow(r.to_json())
    elif format == "json":
        path.write_text(
            json.dumps([r.to_json() for r in records], indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    elif format == "plotdata":
        path.write_text(_plotdata(records), encoding="utf-8")
    else:
        raise InvalidInputError("format must be one of: csv, json, plotdata")
    return path


def _plotdata(records: Sequence[BenchRecord]) -> str:
    """x / sigs-on / sigs-off columns; x is levels when depth varies, else size."""
    usable = [r for r in records if not r.skipped]
    level_mode = len({r.levels for r in usable}) > 1
    xs: dict[int, dict[bool, float]] = {}
    for r in usable:
        x = r.levels if level_mode else r.n_devices
        xs.setdefault(x, {})[r.signatures_enabled] = r.mean_exec_us
    lines = ["# x mean_us_sigs_on mean_us_sigs_off"]
    for x in sorted(xs):
        on = xs[x].get(True)
        off = xs[x].get(False)
        lines.append(
            f"{x} {'nan' if on is None else format(on, '.3f')} "
            f"{'nan' if off is None else format(off, '.3f')}"
        )
    return "\n".join(lines) + "\n"


def read_records(path: Path, format: str = "csv") -> list[BenchRecord]:
    """Load records back from csv or json output."""
    path = Path(path)
    if format == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            return [BenchRecord.from_json(row) for row in csv.DictReader(fh)]
    if format == "json":
        return [BenchRecord.from_json(obj) for obj in json.loads(path.read_text(encoding="utf-8"))]
    raise InvalidInputError("format must be csv or json")
