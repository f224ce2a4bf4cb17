"""Batch-size sweeps over plan modes and query distributions, with Pareto flags."""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .costmodel import CostModel
from .engine import TimingConfig, simulate
from .io import thread_cap
from .machine import MachineModel
from .partitioner import DEFAULT_LIF_THRESHOLD, plan_asymmetric, plan_symmetric
from .workload import Fixed, Uniform, Workload

CSV_HEADER = ("batch", "mode", "distribution", "p99_s", "throughput_qps", "lif", "setup_s", "pareto")
MODES = ("symmetric", "asymmetric")
DISTRIBUTIONS = ("uniform", "fixed", "dataset")
_ALIASES = {"empirical": "dataset", "declared": "dataset", "realistic": "dataset"}


@dataclass(frozen=True)
class SweepRow:
    batch: int
    mode: str
    distribution: str
    p99_s: float
    throughput_qps: float
    lif: float
    setup_s: float
    pareto: bool = False


def normalize_distribution(name: str) -> str:
    n = _ALIASES.get(name.strip().lower(), name.strip().lower())
    if n not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {name!r}; choose from {', '.join(DISTRIBUTIONS)}")
    return n


def apply_distribution(w: Workload, name: str) -> Workload:
    """uniform: every table uniform; fixed: every index 0; dataset: as declared in the workload."""
    name = normalize_distribution(name)
    if name == "uniform":
        return w.with_distribution(Uniform())
    if name == "fixed":
        return w.with_distribution(Fixed(0))
    return w


def pareto_flags(points: Sequence[tuple[float, float]]) -> list[bool]:
    """True for points (p99, throughput) not dominated by any other point.

    Dominated means another point is no worse in both (lower-or-equal p99,
    higher-or-equal throughput) and strictly better in at least one.
    """
    flags = []
    for i, (lat, thr) in enumerate(points):
        dominated = any(
            (l2 <= lat and t2 >= thr) and (l2 < lat or t2 > thr)
            for j, (l2, t2) in enumerate(points)
            if j != i
        )
        flags.append(not dominated)
    return flags


def _mark_pareto(rows: list[SweepRow]) -> list[SweepRow]:
    out = list(rows)
    for dist in dict.fromkeys(r.distribution for r in rows):
        idx = [i for i, r in enumerate(rows) if r.distribution == dist]
        flags = pareto_flags([(rows[i].p99_s, rows[i].throughput_qps) for i in idx])
        for i, f in zip(idx, flags):
            out[i] = replace(rows[i], pareto=f)
    return out


def run_point(
    w: Workload,
    m: MachineModel,
    cm: CostModel,
    timing: TimingConfig,
    batch: int,
    distribution: str,
    mode: str,
    batches: int,
    seed: int,
    lif_threshold: float = DEFAULT_LIF_THRESHOLD,
) -> SweepRow:
    wb = apply_distribution(w.with_batch_size(batch), distribution)
    if mode == "symmetric":
        plan = plan_symmetric(wb, m, cm)
    elif mode == "asymmetric":
        plan = plan_asymmetric(wb, m, cm, lif_threshold)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    res = simulate(plan, wb, timing, batches=batches, seed=seed, threads=1)
    return SweepRow(
        batch=batch,
        mode=mode,
        distribution=normalize_distribution(distribution),
        p99_s=res.p99,
        throughput_qps=res.avg_throughput,
        lif=res.lif_observed,
        setup_s=res.setup_s,
    )


def run_sweep(
    w: Workload,
    m: MachineModel,
    cm: CostModel,
    timing: TimingConfig,
    batch_sizes: Sequence[int],
    distributions: Sequence[str] = ("uniform",),
    batches: int = 100,
    seed: int = 0,
    lif_threshold: float = DEFAULT_LIF_THRESHOLD,
    modes: Sequence[str] = MODES,
    threads: int | None = None,
) -> list[SweepRow]:
    """One row per (batch, distribution, mode), always in that nesting order."""
    if not batch_sizes:
        raise ValueError("batch size list is empty")
    points = [(b, normalize_distribution(d), mode) for b in batch_sizes for d in distributions for mode in modes]
    threads = thread_cap() if threads is None else threads

    def one(pt):
        b, d, mode = pt
        return run_point(w, m, cm, timing, b, d, mode, batches, seed, lif_threshold)

    if threads <= 1:
        rows = [one(pt) for pt in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, points))  # map keeps submission order
    return _mark_pareto(rows)


def to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for r in rows:
        buf.write(
            f"{r.batch},{r.mode},{r.distribution},{r.p99_s!r},{r.throughput_qps!r},{r.lif!r},{r.setup_s!r},"
            f"{int(r.pareto)}\n"
        )
    return buf.getvalue()
