"""Functional and timing execution of plans.

Functional side: every core gathers rows of its chunks, offsets/clips the
indices into the chunk, zeroes contributions that fall outside it, and
sum-pools per sample. Partial sums are merged in core-index order, so the
result does not depend on how cores are scheduled onto threads.

Timing side: a per-strategy cost model per core, batch latency = slowest core.

  GM, L1      per lookup: fetch a row, pool it; double buffered, so after the
              first row each lookup costs max(fetch, pool)
  GM_UB       stage the chunk into the vector buffer in tiles, then gather
  L1_UB       same, staging from the preloaded L1 copy

GM row fetches (and GM_UB staging) slow down by 1 + penalty * (c - 1) when c
cores touch the same table row in the same batch.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .costmodel import Coefficients, StrategyKind
from .io import thread_cap
from .machine import MachineModel
from .partitioner import Assignment, Plan
from .workload import QueryBatch, Workload, derive_seed, generate_queries

logger = logging.getLogger(__name__)

__all__ = [
    "EngineError",
    "TimingConfig",
    "EmbeddingStore",
    "SimResult",
    "percentile",
    "reference_execute",
    "execute_plan",
    "plan_timing",
    "simulate",
    "random_store",
]


class EngineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Statistics


def percentile(samples: Sequence[float], p: float) -> float:
    """Order statistic at 1-based index ceil(p * n)."""
    n = len(samples)
    if n == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 1:
        raise ValueError(f"p must be in (0, 1], got {p}")
    # p*n can land a hair above an integer (0.99*100 = 99.00000000000001)
    k = math.ceil(round(p * n, 9))
    return float(sorted(samples)[max(k, 1) - 1])


# ---------------------------------------------------------------------------
# Timing configuration


@dataclass(frozen=True)
class TimingConfig:
    task_overhead: float = 1e-6  # s per assignment
    ub_setup: float = 0.5e-6  # extra s per UB assignment
    gm_row_latency: float = 40e-9  # s per GM row fetch
    gm_s_per_byte: float = 32 / 1.2e12  # per-core share of GM bandwidth
    row_access_bytes_min: int = 32
    l1_row_latency: float = 2e-9
    l1_s_per_byte: float = 1 / 256e9
    pool_s_per_elem: float = 0.5e-9
    vec_s_per_elem: float = 0.125e-9  # vectorized gather + accumulate
    chunk_stage_in_cost: float = 32 / 1.2e12  # s per byte, GM -> UB
    l1_to_ub_cost: float = 1 / 256e9  # s per byte, L1 -> UB
    ub_bytes: int = 256 * 1024
    ub_tile_overhead: float = 50e-9  # s per staged tile
    conflict_penalty: float = 1.0
    jitter: float = 0.0  # multiplicative noise amplitude per (batch, core)

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise EngineError(f"timing field {f.name} must be >= 0")
        if self.ub_bytes < 1 or self.row_access_bytes_min < 1:
            raise EngineError("ub_bytes and row_access_bytes_min must be positive")

    @classmethod
    def from_machine(cls, m: MachineModel, **overrides) -> "TimingConfig":
        kw = dict(
            gm_row_latency=m.gm_access_latency,
            gm_s_per_byte=m.cores / m.gm_bandwidth,
            row_access_bytes_min=m.row_access_bytes_min,
            l1_s_per_byte=1.0 / m.l1_bandwidth,
            chunk_stage_in_cost=m.cores / m.gm_bandwidth,
            l1_to_ub_cost=1.0 / m.l1_bandwidth,
            ub_bytes=m.ub_bytes,
            conflict_penalty=m.conflict_penalty,
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TimingConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise EngineError(f"unknown timing fields: {sorted(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path, machine: MachineModel | None = None) -> "TimingConfig":
        """Fields absent from the file default to the machine-derived values."""
        d = json.loads(Path(path).read_text())
        if machine is not None:
            return cls.from_machine(machine, **d)
        return cls.from_dict(d)

    # per-row pieces -------------------------------------------------------

    def gm_fetch(self, row_bytes: int) -> float:
        return self.gm_row_latency + max(row_bytes, self.row_access_bytes_min) * self.gm_s_per_byte

    def l1_fetch(self, row_bytes: int) -> float:
        return self.l1_row_latency + row_bytes * self.l1_s_per_byte

    def pool(self, embed_dim: int) -> float:
        return embed_dim * self.pool_s_per_elem

    def tiles(self, chunk_bytes: int) -> int:
        return -(-chunk_bytes // self.ub_bytes)

    def linear_coefficients(self, strategy: StrategyKind, row_bytes: int, embed_dim: int) -> Coefficients:
        """The cost-model coefficients this timing model implies.

        Exact when there are no conflicts, no jitter and ``ub_tile_overhead``
        is 0 (otherwise tile rounding adds a step in the row count), for
        assignments with at least one lookup.
        """
        strategy = StrategyKind.parse(strategy)
        pool = self.pool(embed_dim)
        if strategy.is_ub:
            per_byte = self.chunk_stage_in_cost if strategy == StrategyKind.GM_UB else self.l1_to_ub_cost
            return Coefficients(
                self.task_overhead + self.ub_setup,
                embed_dim * self.vec_s_per_elem,
                row_bytes * per_byte,
            )
        x = self.gm_fetch(row_bytes) if strategy == StrategyKind.GM else self.l1_fetch(row_bytes)
        return Coefficients(self.task_overhead + min(x, pool), max(x, pool), 0.0)


# ---------------------------------------------------------------------------
# Stores and the reference


EmbeddingStore = Mapping[str, np.ndarray]


def random_store(w: Workload, seed: int = 0, low: int = -8, high: int = 8, dtype=np.float64) -> dict[str, np.ndarray]:
    """Integer-valued store (exact under summation) for equivalence testing."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xE5])))
    return {t.id: rng.integers(low, high, size=(t.rows, t.embed_dim)).astype(dtype) for t in w.tables}


def _acc_dtype(dtype) -> np.dtype:
    return np.dtype(np.int64) if np.issubdtype(dtype, np.integer) else np.dtype(np.float64)


def _check_store(w: Workload, store: EmbeddingStore) -> None:
    for t in w.tables:
        if t.id not in store:
            raise EngineError(f"store has no table {t.id!r}")
        if store[t.id].shape != (t.rows, t.embed_dim):
            raise EngineError(f"store table {t.id!r} has shape {store[t.id].shape}, expected {(t.rows, t.embed_dim)}")


def reference_execute(w: Workload, store: EmbeddingStore, q: QueryBatch) -> dict[str, np.ndarray]:
    """Single-core gather + sum pooling, no sharding."""
    _check_store(w, store)
    out = {}
    for t in w.tables:
        idx = q[t.id]
        if idx.shape != (w.batch_size, t.seq_len):
            raise EngineError(f"query matrix for {t.id!r} has shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= t.rows):
            raise EngineError(f"query index out of range for table {t.id!r}")
        table = store[t.id]
        acc = table.astype(_acc_dtype(table.dtype))[idx].sum(axis=1)
        out[t.id] = acc.astype(table.dtype)
    return out


# ---------------------------------------------------------------------------
# Functional plan execution


def _core_partials(assignments: list[Assignment], w: Workload, store, q: QueryBatch, mask: bool):
    """Partial sums of one core: list of (table_id, span_start, B_span x E array)."""
    parts = []
    for a in assignments:
        t = w.table(a.chunk.table_id)
        table = store[t.id]
        s, e = a.batch_span
        idx = q[t.id][s:e]
        off, n = a.chunk.row_offset, a.chunk.row_count
        local = np.clip(idx - off, 0, n - 1)
        rows = table[off + local].astype(_acc_dtype(table.dtype))  # (span, seq, E)
        if mask:
            inside = (idx >= off) & (idx < off + n)
            rows = rows * inside[..., None]
        parts.append((t.id, s, rows.sum(axis=1)))
    return parts


def _run_cores(fn, per_core: list, threads: int | None):
    threads = thread_cap() if threads is None else threads
    if threads <= 1 or len(per_core) <= 1:
        return [fn(x) for x in per_core]
    with ThreadPoolExecutor(max_workers=min(threads, len(per_core))) as ex:
        return list(ex.map(fn, per_core))


def execute_functional(
    p: Plan, w: Workload, store: EmbeddingStore, q: QueryBatch, *, mask: bool = True, threads: int | None = None
) -> dict[str, np.ndarray]:
    """Pooled output of a plan. ``mask=False`` drops the out-of-chunk zeroing (diagnostic only)."""
    _check_store(w, store)
    if p.batch_size != w.batch_size:
        raise EngineError(f"plan batch size {p.batch_size} != workload batch size {w.batch_size}")
    ids = {t.id for t in w.tables}
    for a in p.assignments:
        if a.chunk.table_id not in ids:
            raise EngineError(f"plan references unknown table {a.chunk.table_id!r}")
    acc = {t.id: np.zeros((w.batch_size, t.embed_dim), dtype=_acc_dtype(store[t.id].dtype)) for t in w.tables}
    partials = _run_cores(lambda asg: _core_partials(asg, w, store, q, mask), p.by_core(), threads)
    for core_parts in partials:  # fixed merge order: core 0, 1, ...
        for tid, s, part in core_parts:
            acc[tid][s : s + len(part)] += part
    return {tid: a.astype(store[tid].dtype) for tid, a in acc.items()}


# ---------------------------------------------------------------------------
# Timing


def _gm_row_multipliers(p: Plan, w: Workload, q: QueryBatch | None, penalty: float) -> dict[int, np.ndarray]:
    """Conflict multiplier per lookup for every GM assignment (keyed by assignment position)."""
    out: dict[int, np.ndarray] = {}
    by_table: dict[str, list[int]] = {}
    for i, a in enumerate(p.assignments):
        if a.strategy == StrategyKind.GM:
            by_table.setdefault(a.chunk.table_id, []).append(i)
    for tid, positions in by_table.items():
        if q is None or penalty == 0:
            for i in positions:
                a = p.assignments[i]
                out[i] = np.ones(a.samples * w.table(tid).seq_len)
            continue
        rows_per = []
        for i in positions:
            a = p.assignments[i]
            idx = q[tid][a.batch_span[0] : a.batch_span[1]].ravel()
            # the hardware clamps out-of-chunk addresses, so that row is still fetched
            rows_per.append(np.clip(idx - a.chunk.row_offset, 0, a.chunk.row_count - 1) + a.chunk.row_offset)
        K = p.cores
        cores = np.array([p.assignments[i].core for i in positions], dtype=np.int64)
        # distinct (row, core) pairs packed as row*K + core, then cores per row
        keys = np.concatenate([r * K + c for r, c in zip(rows_per, cores)])
        urow, counts = np.unique(np.unique(keys) // K, return_counts=True)
        for i, r in zip(positions, rows_per):
            c = counts[np.searchsorted(urow, r)]
            out[i] = 1.0 + penalty * (c - 1)
    return out


def _stage_multipliers(p: Plan, penalty: float) -> dict[int, float]:
    """GM_UB staging conflicts: cores staging the same chunk in the same batch."""
    holders: dict[tuple, set] = {}
    for a in p.assignments:
        if a.strategy == StrategyKind.GM_UB:
            holders.setdefault((a.chunk.table_id, a.chunk.row_offset, a.chunk.row_count), set()).add(a.core)
    out = {}
    for i, a in enumerate(p.assignments):
        if a.strategy == StrategyKind.GM_UB:
            c = len(holders[(a.chunk.table_id, a.chunk.row_offset, a.chunk.row_count)])
            out[i] = 1.0 + penalty * (c - 1)
    return out


def assignment_time(a: Assignment, w: Workload, t: TimingConfig, gm_mult: np.ndarray | None = None, stage_mult: float = 1.0) -> float:
    tab = w.table(a.chunk.table_id)
    n = a.samples * tab.seq_len
    if n == 0:
        return 0.0
    rb, E = tab.row_bytes, tab.embed_dim
    s = a.strategy
    if s.is_ub:
        nbytes = a.chunk.row_count * rb
        per_byte = t.chunk_stage_in_cost * stage_mult if s == StrategyKind.GM_UB else t.l1_to_ub_cost
        stage = nbytes * per_byte + t.tiles(nbytes) * t.ub_tile_overhead
        return t.task_overhead + t.ub_setup + stage + n * E * t.vec_s_per_elem
    pool = t.pool(E)
    if s == StrategyKind.GM:
        x = t.gm_fetch(rb)
        if gm_mult is not None and np.any(gm_mult != 1.0):
            xs = x * gm_mult
            return t.task_overhead + xs[0] + pool + float(np.maximum(xs[1:], pool).sum())
    else:
        x = t.l1_fetch(rb)
    return t.task_overhead + x + pool + (n - 1) * max(x, pool)


def access_times(p: Plan, w: Workload, t: TimingConfig, q: QueryBatch | None) -> dict[int, np.ndarray]:
    """Per-lookup GM fetch time of every GM assignment, conflicts included."""
    mult = _gm_row_multipliers(p, w, q, t.conflict_penalty)
    return {i: t.gm_fetch(w.table(p.assignments[i].chunk.table_id).row_bytes) * m for i, m in mult.items()}


def plan_timing(p: Plan, w: Workload, t: TimingConfig, q: QueryBatch | None = None) -> list[float]:
    """Per-core time for one batch (without jitter). ``q`` is needed only for GM conflicts."""
    gm = _gm_row_multipliers(p, w, q, t.conflict_penalty)
    st = _stage_multipliers(p, t.conflict_penalty)
    core = [0.0] * p.cores
    for i, a in enumerate(p.assignments):
        core[a.core] += assignment_time(a, w, t, gm.get(i), st.get(i, 1.0))
    return core


def setup_time(p: Plan, w: Workload, t: TimingConfig) -> float:
    """One-off preload of L1-resident chunks (slowest core), kept out of batch latency."""
    per_core = [0.0] * p.cores
    seen = set()
    for a in p.assignments:
        key = (a.core, a.chunk)
        if a.strategy.is_l1 and key not in seen:
            seen.add(key)
            per_core[a.core] += a.chunk.row_count * w.table(a.chunk.table_id).row_bytes * t.chunk_stage_in_cost
    return max(per_core) if per_core else 0.0


def _jitter(t: TimingConfig, seed: int, batch: int, cores: int) -> np.ndarray:
    if t.jitter == 0:
        return np.ones(cores)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), int(batch), 0x717])))
    return 1.0 + t.jitter * rng.random(cores)


def execute_plan(
    p: Plan,
    w: Workload,
    store: EmbeddingStore,
    q: QueryBatch,
    t: TimingConfig,
    *,
    mask: bool = True,
    threads: int | None = None,
) -> tuple[dict[str, np.ndarray], float, list[float]]:
    """Pooled output, batch latency and per-core times for one query batch."""
    out = execute_functional(p, w, store, q, mask=mask, threads=threads)
    per_core = plan_timing(p, w, t, q)
    return out, max(per_core), per_core


# ---------------------------------------------------------------------------
# Simulation


@dataclass(frozen=True)
class SimResult:
    latency_samples: tuple[float, ...]
    p99: float
    avg_throughput: float
    lif_observed: float
    per_core_times: tuple[tuple[float, ...], ...]  # [core][batch]
    batch_size: int
    setup_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "batches": len(self.latency_samples),
            "p99_s": self.p99,
            "throughput_qps": self.avg_throughput,
            "lif": self.lif_observed,
            "setup_s": self.setup_s,
            "latency_samples": list(self.latency_samples),
            "per_core_mean_s": [float(np.mean(c)) for c in self.per_core_times],
        }


def simulate(
    p: Plan,
    w: Workload,
    t: TimingConfig,
    batches: int = 100,
    seed: int = 0,
    *,
    store: EmbeddingStore | None = None,
    threads: int | None = None,
) -> SimResult:
    """Timing over ``batches`` query batches with per-batch seeds derived from ``seed``.

    With ``store`` given, every batch is also executed functionally and the
    pooled output is checked against :func:`reference_execute`.
    """
    if batches < 1:
        raise EngineError("batches must be >= 1")
    if batches < 100:
        logger.warning("only %d batches; P99 needs at least 100 to be meaningful", batches)
    if p.batch_size != w.batch_size:
        raise EngineError(f"plan batch size {p.batch_size} != workload batch size {w.batch_size}")
    gm_tables = sorted({a.chunk.table_id for a in p.assignments if a.strategy == StrategyKind.GM})
    need_queries = store is not None or (gm_tables and t.conflict_penalty > 0)
    samples, cores = [], [[] for _ in range(p.cores)]
    static = None if need_queries else plan_timing(p, w, t, None)
    for b in range(batches):
        bseed = derive_seed(seed, b)
        if need_queries:
            q = generate_queries(w, bseed, only=None if store is not None else gm_tables)
            per_core = plan_timing(p, w, t, q)
            if store is not None:
                got = execute_functional(p, w, store, q, threads=threads)
                ref = reference_execute(w, store, q)
                for tid in ref:
                    if not np.allclose(got[tid], ref[tid], rtol=1e-5, atol=0):
                        raise EngineError(f"batch {b}: pooled output for {tid!r} differs from reference")
        else:
            per_core = static
        per_core = [x * j for x, j in zip(per_core, _jitter(t, seed, b, p.cores))]
        for k, x in enumerate(per_core):
            cores[k].append(x)
        samples.append(max(per_core))
    means = [math.fsum(c) / batches for c in cores]
    lif_obs = max(means) * len(means) / math.fsum(means) if math.fsum(means) > 0 else 1.0
    return SimResult(
        latency_samples=tuple(samples),
        p99=percentile(samples, 0.99),
        avg_throughput=w.batch_size * batches / math.fsum(samples),
        lif_observed=lif_obs,
        per_core_times=tuple(tuple(c) for c in cores),
        batch_size=w.batch_size,
        setup_s=setup_time(p, w, t),
    )
