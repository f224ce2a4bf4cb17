"""Table-to-core placement: greedy symmetric and asymmetric planners.

Symmetric plans put every table on every core and split the batch evenly.
Asymmetric plans give each table (or L1-sized chunk of a table) to a single
core that processes the whole batch for it; once the placement would become
too unbalanced, the rest of the tables fall back to the symmetric scheme.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .costmodel import GM_PAIR, L1_PAIR, CostModel, StrategyKind, estimate_table_cost
from .machine import MachineModel
from .workload import TableSpec, Workload, placement_order

__all__ = [
    "Chunk",
    "Assignment",
    "Plan",
    "PlanError",
    "batch_spans",
    "chunk_table",
    "lif",
    "plan_symmetric",
    "plan_asymmetric",
    "single_strategy_plan",
    "validate_plan",
    "DEFAULT_LIF_THRESHOLD",
]

DEFAULT_LIF_THRESHOLD = 1.25


class PlanError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Chunk:
    table_id: str
    row_offset: int
    row_count: int
    replication: int = 1

    @property
    def row_end(self) -> int:
        return self.row_offset + self.row_count


@dataclass(frozen=True)
class Assignment:
    chunk: Chunk
    strategy: StrategyKind
    core: int
    batch_span: tuple[int, int]

    @property
    def table_id(self) -> str:
        return self.chunk.table_id

    @property
    def samples(self) -> int:
        return self.batch_span[1] - self.batch_span[0]


@dataclass(frozen=True)
class Plan:
    kind: str  # "symmetric" | "asymmetric"
    assignments: tuple[Assignment, ...]
    predicted_core_times: tuple[float, ...]
    predicted_lif: float
    batch_size: int
    # LIF over the occupied cores after each asymmetric placement
    lif_trace: tuple[float, ...] = ()
    # tables handed whole to the symmetric fallback
    fallback_tables: tuple[str, ...] = ()

    @property
    def cores(self) -> int:
        return len(self.predicted_core_times)

    def by_core(self) -> list[list[Assignment]]:
        out: list[list[Assignment]] = [[] for _ in range(self.cores)]
        for a in self.assignments:
            out[a.core].append(a)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "batch_size": self.batch_size,
            "cores": self.cores,
            "predicted_core_times": list(self.predicted_core_times),
            "predicted_lif": self.predicted_lif,
            "lif_trace": list(self.lif_trace),
            "fallback_tables": list(self.fallback_tables),
            "assignments": [
                {
                    "table_id": a.chunk.table_id,
                    "row_offset": a.chunk.row_offset,
                    "row_count": a.chunk.row_count,
                    "replication": a.chunk.replication,
                    "strategy": a.strategy.value,
                    "core": a.core,
                    "batch_span": [a.batch_span[0], a.batch_span[1]],
                }
                for a in self.assignments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        try:
            assignments = tuple(
                Assignment(
                    chunk=Chunk(str(a["table_id"]), int(a["row_offset"]), int(a["row_count"]), int(a.get("replication", 1))),
                    strategy=StrategyKind.parse(a["strategy"]),
                    core=int(a["core"]),
                    batch_span=(int(a["batch_span"][0]), int(a["batch_span"][1])),
                )
                for a in d["assignments"]
            )
            return cls(
                kind=str(d["kind"]),
                assignments=assignments,
                predicted_core_times=tuple(float(x) for x in d["predicted_core_times"]),
                predicted_lif=float(d["predicted_lif"]),
                batch_size=int(d["batch_size"]),
                lif_trace=tuple(float(x) for x in d.get("lif_trace", ())),
                fallback_tables=tuple(d.get("fallback_tables", ())),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise PlanError(f"malformed plan document: {exc!r}") from exc

    def save(self, path: str | Path) -> None:
        from .io import write_atomic

        write_atomic(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Plan":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Building blocks


def lif(core_times: Sequence[float]) -> float:
    """Load imbalance factor, max / mean."""
    if len(core_times) == 0:
        raise ValueError("lif of an empty sequence")
    if any(t < 0 for t in core_times):
        raise ValueError("core times must be non-negative")
    total = math.fsum(core_times)
    if total <= 0:
        raise ValueError("lif undefined: all core times are zero")
    return max(core_times) * len(core_times) / total


def batch_spans(batch_size: int, cores: int) -> list[tuple[int, int]]:
    """Even split of [0, B); the first ``B % K`` cores take one extra sample."""
    base, rem = divmod(batch_size, cores)
    spans, start = [], 0
    for k in range(cores):
        n = base + (1 if k < rem else 0)
        spans.append((start, start + n))
        start += n
    return spans


def chunk_table(t: TableSpec, l1_budget_bytes: int) -> list[Chunk]:
    """Fewest chunks of at most ``l1_budget_bytes`` each, sizes within one row."""
    if l1_budget_bytes < t.row_bytes:
        raise PlanError(f"table {t.id!r}: chunk budget {l1_budget_bytes} B is smaller than one row ({t.row_bytes} B)")
    c = max(1, -(-t.bytes // l1_budget_bytes))
    base, rem = divmod(t.rows, c)
    chunks, off = [], 0
    for i in range(c):
        n = base + (1 if i < rem else 0)
        chunks.append(Chunk(t.id, off, n))
        off += n
    return chunks


def _chunk_bytes(t: TableSpec, rows: int) -> int:
    return rows * t.row_bytes


def _cost(cm: CostModel, m: MachineModel, t: TableSpec, s: StrategyKind, lookups: int, rows: int) -> float:
    return estimate_table_cost(cm, s, lookups, rows, embed_dim=t.embed_dim, machine=m.name)


def _choose(cm, m, t, pair, lookups, rows) -> tuple[StrategyKind, float]:
    # ties go to pair[0], the non-UB variant
    best = None
    for s in pair:
        c = _cost(cm, m, t, s, lookups, rows)
        if best is None or c < best[1]:
            best = (s, c)
    return best


def _check_inputs(w: Workload, m: MachineModel, cm: CostModel) -> None:
    if w.batch_size < 1:
        raise PlanError("batch size must be >= 1")
    strategies = tuple(StrategyKind) if m.l1_persistence else GM_PAIR
    for t in w.tables:
        for s in strategies:
            # raises CostModelError naming the missing pair
            cm.coefficients(s, t.embed_dim, m.name)


def _assign_symmetric(
    units: list[tuple[TableSpec, int, int]],
    w: Workload,
    m: MachineModel,
    cm: CostModel,
    l1_left: list[int],
    core_times: list[float],
) -> list[Assignment]:
    """Split every unit's batch over all cores; same strategy on every core.

    Units are (table, row_offset, row_count) in placement order. L1 packing is
    first-fit against the smallest remaining per-core budget.
    """
    K = m.cores
    spans = batch_spans(w.batch_size, K)
    busiest = spans[0][1] - spans[0][0]
    out = []
    for t, off, n in units:
        nbytes = _chunk_bytes(t, n)
        if m.l1_persistence and nbytes <= min(l1_left):
            pair = L1_PAIR
        else:
            pair = GM_PAIR
        s, _ = _choose(cm, m, t, pair, busiest * t.seq_len, n)
        chunk = Chunk(t.id, off, n)
        for k, span in enumerate(spans):
            if span[1] == span[0]:
                continue
            out.append(Assignment(chunk, s, k, span))
            core_times[k] += _cost(cm, m, t, s, (span[1] - span[0]) * t.seq_len, n)
            if s.is_l1:
                l1_left[k] -= nbytes
    return out


def _finish(kind, w, assignments, core_times, trace=(), fallback=()) -> Plan:
    total = math.fsum(core_times)
    return Plan(
        kind=kind,
        assignments=tuple(assignments),
        predicted_core_times=tuple(core_times),
        predicted_lif=lif(core_times) if total > 0 else 1.0,
        batch_size=w.batch_size,
        lif_trace=tuple(trace),
        fallback_tables=tuple(fallback),
    )


# ---------------------------------------------------------------------------
# Planners


def plan_symmetric(w: Workload, m: MachineModel, cm: CostModel) -> Plan:
    """Every core gets every table and B/K samples.

    Tables are visited in placement order (longest sequences first, then
    smallest); each one that still fits in L1 picks the cheaper of L1/L1_UB,
    the rest pick the cheaper of GM/GM_UB.
    """
    _check_inputs(w, m, cm)
    core_times = [0.0] * m.cores
    l1_left = [m.l1_bytes] * m.cores
    units = [(t, 0, t.rows) for t in placement_order(w.tables)]
    assignments = _assign_symmetric(units, w, m, cm, l1_left, core_times)
    return _finish("symmetric", w, assignments, core_times)


def chunking_decision(
    t: TableSpec, w: Workload, m: MachineModel, cm: CostModel, l1_reserve: int = 0
) -> list[Chunk] | None:
    """Chunks for a table too large for one core's L1, or None to keep it whole.

    A table is split only when the modeled speed-up of the L1 variants over
    the GM variants, both charged with the full batch, exceeds the number of
    chunks (each chunk scans the full index stream). Chunks beyond the core
    count could not all be L1-resident and are never produced.
    """
    max_chunk = m.l1_bytes - l1_reserve
    if not m.l1_persistence or t.bytes <= max_chunk or max_chunk < t.row_bytes:
        return None
    chunks = chunk_table(t, max_chunk)
    c = len(chunks)
    if c > m.cores:
        return None
    lookups = w.batch_size * t.seq_len
    _, gm = _choose(cm, m, t, GM_PAIR, lookups, t.rows)
    _, l1 = _choose(cm, m, t, L1_PAIR, lookups, max(ch.row_count for ch in chunks))
    if l1 > 0 and gm / l1 > c:
        return chunks
    return None


def plan_asymmetric(
    w: Workload,
    m: MachineModel,
    cm: CostModel,
    lif_threshold: float = DEFAULT_LIF_THRESHOLD,
    l1_reserve: int = 0,
) -> Plan:
    """Greedy asymmetric sharding with a symmetric fallback.

    Tables (split into L1-sized chunks where worthwhile) are placed in
    placement order on the currently least-loaded core, each handling the full
    batch. L1/L1_UB is used if the chunk fits that core's remaining L1,
    GM/GM_UB otherwise. If a placement would push the load imbalance factor
    of the occupied cores to ``lif_threshold`` or above, that table (all of its
    chunks) and every later table are partitioned symmetrically instead.
    """
    if not lif_threshold > 1:
        raise PlanError(f"lif_threshold must be > 1, got {lif_threshold}")
    _check_inputs(w, m, cm)
    K = m.cores
    B = w.batch_size
    core_times = [0.0] * K
    l1_left = [m.l1_bytes] * K
    used = [False] * K
    assignments: list[Assignment] = []
    trace: list[float] = []

    order = placement_order(w.tables)
    fallback_units: list[tuple[TableSpec, int, int]] = []
    for ti, t in enumerate(order):
        chunks = chunking_decision(t, w, m, cm, l1_reserve) or [Chunk(t.id, 0, t.rows)]
        # a table is placed whole or not at all, so the fallback never gets a partial row range
        staged = (list(core_times), list(l1_left), list(used))
        placed: list[Assignment] = []
        levels: list[float] = []
        for ch in chunks:
            core = min(range(K), key=lambda k: (core_times[k], k))
            nbytes = _chunk_bytes(t, ch.row_count)
            pair = L1_PAIR if m.l1_persistence and nbytes <= l1_left[core] else GM_PAIR
            s, cost = _choose(cm, m, t, pair, B * t.seq_len, ch.row_count)
            core_times[core] += cost
            used[core] = True
            occupied = [core_times[k] for k in range(K) if used[k]]
            level = lif(occupied) if math.fsum(occupied) > 0 else 1.0
            if level >= lif_threshold:
                core_times, l1_left, used = staged
                fallback_units = [(u, 0, u.rows) for u in order[ti:]]
                break
            placed.append(Assignment(ch, s, core, (0, B)))
            levels.append(level)
            if s.is_l1:
                l1_left[core] -= nbytes
        if fallback_units:
            break
        assignments += placed
        trace += levels

    if fallback_units:
        assignments += _assign_symmetric(fallback_units, w, m, cm, l1_left, core_times)
    fallback = tuple(u[0].id for u in fallback_units)
    return _finish("asymmetric", w, assignments, core_times, trace, fallback)


def single_strategy_plan(w: Workload, m: MachineModel, strategy: StrategyKind) -> Plan:
    """Symmetric plan forcing one strategy on every table; predicted times are left at 0."""
    strategy = StrategyKind.parse(strategy)
    assignments = []
    for t in w.tables:
        for k, span in enumerate(batch_spans(w.batch_size, m.cores)):
            if span[1] > span[0]:
                assignments.append(Assignment(Chunk(t.id, 0, t.rows), strategy, k, span))
    return _finish("symmetric", w, assignments, [0.0] * m.cores)


# ---------------------------------------------------------------------------
# Validation


def _coverage_violations(label: str, intervals: list[tuple[int, int]], lo: int, hi: int) -> list[str]:
    out = []
    iv = sorted(intervals)
    pos = lo
    for a, b in iv:
        if a < pos:
            out.append(f"{label}: ranges overlap at [{a},{min(pos, b)})")
        elif a > pos:
            out.append(f"{label}: gap [{pos},{a}) not covered")
        pos = max(pos, b)
    if pos < hi:
        out.append(f"{label}: gap [{pos},{hi}) not covered")
    return out


def validate_plan(p: Plan, w: Workload, m: MachineModel) -> list[str]:
    """All invariant violations of ``p`` (empty list means the plan is valid)."""
    v: list[str] = []
    K, B = m.cores, w.batch_size
    if p.cores != K:
        v.append(f"plan has {p.cores} core times, machine has {K} cores")
    if p.batch_size != B:
        v.append(f"plan batch size {p.batch_size} != workload batch size {B}")
    if p.kind not in ("symmetric", "asymmetric"):
        v.append(f"unknown plan kind {p.kind!r}")
    tables = {t.id: t for t in w.tables}
    l1_used = [0] * K
    l1_chunks: list[set] = [set() for _ in range(K)]
    per_table: dict[str, dict[tuple[int, int], list[tuple[int, int]]]] = {tid: {} for tid in tables}

    for i, a in enumerate(p.assignments):
        ch = a.chunk
        t = tables.get(ch.table_id)
        if t is None:
            v.append(f"assignment {i}: unknown table {ch.table_id!r}")
            continue
        if ch.replication != 1:
            v.append(f"assignment {i}: table {ch.table_id!r} replication {ch.replication} != 1")
        if ch.row_offset < 0 or ch.row_count < 1 or ch.row_end > t.rows:
            v.append(f"assignment {i}: table {ch.table_id!r} chunk [{ch.row_offset},{ch.row_end}) outside [0,{t.rows})")
        if not 0 <= a.core < K:
            v.append(f"assignment {i}: core {a.core} outside [0,{K})")
            continue
        s, e = a.batch_span
        if not (0 <= s < e <= B):
            v.append(f"assignment {i}: table {ch.table_id!r} batch span [{s},{e}) empty or outside [0,{B})")
        if a.strategy.is_l1:
            if not m.l1_persistence:
                v.append(f"assignment {i}: {a.strategy.value} on machine {m.name!r} without L1 persistence")
            key = (ch.table_id, ch.row_offset, ch.row_count)
            if key not in l1_chunks[a.core]:
                l1_chunks[a.core].add(key)
                l1_used[a.core] += _chunk_bytes(t, ch.row_count)
        per_table[ch.table_id].setdefault((ch.row_offset, ch.row_end), []).append((s, e))

    for tid, t in tables.items():
        chunks = per_table[tid]
        if not chunks:
            v.append(f"table {tid!r}: not covered by any assignment")
            continue
        v += _coverage_violations(f"table {tid!r} rows", list(chunks), 0, t.rows)
        for (a, b), spans in sorted(chunks.items()):
            v += _coverage_violations(f"table {tid!r} chunk [{a},{b}) batch", spans, 0, B)

    for k in range(K):
        if l1_used[k] > m.l1_bytes:
            v.append(f"core {k}: L1 usage {l1_used[k]} B exceeds budget {m.l1_bytes} B")

    times = p.predicted_core_times
    if times and math.fsum(times) > 0:
        expected = lif(times)
        if not math.isclose(p.predicted_lif, expected, rel_tol=1e-12):
            v.append(f"predicted_lif {p.predicted_lif} != max/mean of core times {expected}")
    return v
