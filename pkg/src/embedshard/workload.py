"""Embedding workloads and index query generation.

A workload is a set of embedding tables plus a batch size. Each table carries
its own access distribution; :func:`generate_queries` turns a workload and a
64-bit seed into one batch of row indices per table.

Randomness comes from numpy's Philox (a counter-based generator), keyed by
``(seed, table position)``, so a batch is reproducible on every platform and
tables can be generated in any order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "Uniform",
    "Fixed",
    "Empirical",
    "DistributionSpec",
    "TableSpec",
    "Workload",
    "QueryBatch",
    "WorkloadError",
    "table_bytes",
    "zipf_weights",
    "load_workload",
    "workload_from_dict",
    "workload_to_dict",
    "derive_seed",
    "generate_queries",
    "placement_order",
]

VALID_ELEM_BYTES = (1, 2, 4, 8)
MAX_BYTES = 2**63 - 1


class WorkloadError(ValueError):
    """Malformed or invalid workload description."""


@dataclass(frozen=True)
class Uniform:
    kind = "uniform"


@dataclass(frozen=True)
class Fixed:
    index: int = 0
    kind = "fixed"


@dataclass(frozen=True, eq=False)
class Empirical:
    """Per-row sampling weights (an access histogram); need not be normalized."""

    weights: np.ndarray
    kind = "empirical"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise WorkloadError("empirical weights must be one-dimensional")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise WorkloadError("empirical weights must be finite and non-negative")
        if w.sum() <= 0:
            raise WorkloadError("empirical weights must have a positive sum")
        object.__setattr__(self, "weights", w)

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        return c / c[-1]


DistributionSpec = Union[Uniform, Fixed, Empirical]


@dataclass(frozen=True)
class TableSpec:
    id: str
    rows: int
    embed_dim: int = 16
    elem_bytes: int = 2
    seq_len: int = 1
    distribution: DistributionSpec = field(default_factory=Uniform)

    def __post_init__(self):
        for name in ("rows", "embed_dim", "seq_len"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise WorkloadError(f"table {self.id!r}: {name} must be a positive integer, got {v!r}")
        if self.elem_bytes not in VALID_ELEM_BYTES:
            raise WorkloadError(
                f"table {self.id!r}: elem_bytes must be one of {VALID_ELEM_BYTES}, got {self.elem_bytes!r}"
            )
        d = self.distribution
        if isinstance(d, Fixed):
            if not 0 <= d.index < self.rows:
                raise WorkloadError(f"table {self.id!r}: fixed index {d.index} outside [0, {self.rows})")
        elif isinstance(d, Empirical):
            if len(d.weights) != self.rows:
                raise WorkloadError(
                    f"table {self.id!r}: {len(d.weights)} empirical weights for {self.rows} rows"
                )
        elif not isinstance(d, Uniform):
            raise WorkloadError(f"table {self.id!r}: unknown distribution {d!r}")

    @property
    def row_bytes(self) -> int:
        return self.embed_dim * self.elem_bytes

    @property
    def bytes(self) -> int:
        return table_bytes(self)


def table_bytes(t: TableSpec) -> int:
    """Return ``rows * embed_dim * elem_bytes``; raises OverflowError past int64."""
    n = int(t.rows) * int(t.embed_dim) * int(t.elem_bytes)
    if n > MAX_BYTES:
        raise OverflowError(f"table {t.id!r}: byte size {n} exceeds 64-bit range")
    return n


@dataclass(frozen=True)
class Workload:
    name: str
    tables: tuple[TableSpec, ...]
    batch_size: int

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        if not self.tables:
            raise WorkloadError(f"workload {self.name!r} has no tables")
        if not isinstance(self.batch_size, (int, np.integer)) or self.batch_size < 1:
            raise WorkloadError(f"workload {self.name!r}: batch_size must be a positive integer")
        seen = set()
        for t in self.tables:
            if t.id in seen:
                raise WorkloadError(f"duplicate table id {t.id!r}")
            seen.add(t.id)

    def table(self, table_id: str) -> TableSpec:
        for t in self.tables:
            if t.id == table_id:
                return t
        raise KeyError(table_id)

    def with_batch_size(self, batch_size: int) -> "Workload":
        return replace(self, batch_size=batch_size)

    def with_distribution(self, dist: DistributionSpec) -> "Workload":
        return replace(self, tables=tuple(replace(t, distribution=dist) for t in self.tables))


def placement_order(tables: Iterable[TableSpec]) -> list[TableSpec]:
    """Descending sequence length, ascending byte size, then table id."""
    return sorted(tables, key=lambda t: (-t.seq_len, t.bytes, t.id))


def zipf_weights(rows: int, exponent: float) -> np.ndarray:
    """Weights ``1 / rank**exponent`` for ranks 1..rows (row 0 is the hottest)."""
    if rows < 1:
        raise WorkloadError("rows must be positive")
    if exponent < 0:
        raise WorkloadError("zipf exponent must be non-negative")
    return np.arange(1, rows + 1, dtype=np.float64) ** -float(exponent)


# ---------------------------------------------------------------------------
# File loading


def _parse_distribution(d: dict, table_id: str, rows: int, base: Path) -> DistributionSpec:
    kind = d.get("kind")
    if kind == "uniform":
        return Uniform()
    if kind == "fixed":
        return Fixed(int(d.get("index", 0)))
    if kind == "empirical":
        if "weights" in d:
            weights = np.asarray(d["weights"], dtype=np.float64)
        elif "weights_path" in d:
            p = Path(d["weights_path"])
            if not p.is_absolute():
                p = base / p
            try:
                lines = [ln.strip() for ln in p.read_text().splitlines()]
                weights = np.array([float(ln) for ln in lines if ln], dtype=np.float64)
            except (OSError, ValueError) as exc:
                raise WorkloadError(f"table {table_id!r}: cannot read weights file {p}: {exc}") from exc
        else:
            raise WorkloadError(f"table {table_id!r}: empirical distribution needs weights_path")
        if len(weights) != rows:
            raise WorkloadError(f"table {table_id!r}: {len(weights)} empirical weights for {rows} rows")
        try:
            return Empirical(weights)
        except WorkloadError as exc:
            raise WorkloadError(f"table {table_id!r}: {exc}") from exc
    if kind == "zipf":
        return Empirical(zipf_weights(rows, float(d.get("exponent", 1.0))))
    raise WorkloadError(f"table {table_id!r}: unknown distribution kind {kind!r}")


def workload_from_dict(doc: dict, base: Path | str = ".") -> Workload:
    base = Path(base)
    try:
        tables = []
        for i, t in enumerate(doc["tables"]):
            tid = str(t.get("id", f"#{i}"))
            if "id" not in t:
                raise WorkloadError(f"table {tid}: missing id")
            rows = t["rows"]
            if not isinstance(rows, int) or rows < 1:
                raise WorkloadError(f"table {tid!r}: rows must be a positive integer, got {rows!r}")
            dist = _parse_distribution(t.get("distribution", {"kind": "uniform"}), tid, rows, base)
            tables.append(
                TableSpec(
                    id=tid,
                    rows=rows,
                    embed_dim=t.get("embed_dim", 16),
                    elem_bytes=t.get("elem_bytes", 2),
                    seq_len=t.get("seq_len", 1),
                    distribution=dist,
                )
            )
        return Workload(name=str(doc.get("name", "workload")), tables=tuple(tables), batch_size=doc["batch_size"])
    except KeyError as exc:
        raise WorkloadError(f"missing field {exc.args[0]!r}") from exc
    except TypeError as exc:
        raise WorkloadError(f"malformed workload: {exc}") from exc


def load_workload(path: str | Path) -> Workload:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise WorkloadError(f"{path}: top level must be an object")
    return workload_from_dict(doc, base=path.parent)


def workload_to_dict(w: Workload) -> dict:
    """Inverse of :func:`workload_from_dict`; empirical weights are written inline."""
    out = []
    for t in w.tables:
        d = t.distribution
        if isinstance(d, Fixed):
            dist = {"kind": "fixed", "index": int(d.index)}
        elif isinstance(d, Empirical):
            dist = {"kind": "empirical", "weights": d.weights.tolist()}
        else:
            dist = {"kind": "uniform"}
        out.append(
            {
                "id": t.id,
                "rows": int(t.rows),
                "embed_dim": int(t.embed_dim),
                "elem_bytes": int(t.elem_bytes),
                "seq_len": int(t.seq_len),
                "distribution": dist,
            }
        )
    return {"name": w.name, "batch_size": int(w.batch_size), "tables": out}


# ---------------------------------------------------------------------------
# Query generation


@dataclass(frozen=True, eq=False)
class QueryBatch:
    """One ``batch_size x seq_len`` int64 index matrix per table id."""

    indices: dict[str, np.ndarray]
    seed: int

    def __getitem__(self, table_id: str) -> np.ndarray:
        return self.indices[table_id]

    def __eq__(self, other):
        if not isinstance(other, QueryBatch):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.indices.keys() == other.indices.keys()
            and all(np.array_equal(v, other.indices[k]) for k, v in self.indices.items())
        )


def table_rng(seed: int, position: int) -> np.random.Generator:
    """Philox stream for one table; depends only on (seed, position)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(position)])
    return np.random.Generator(np.random.Philox(ss))


def sample_table(t: TableSpec, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    shape = (batch_size, t.seq_len)
    d = t.distribution
    if isinstance(d, Fixed):
        return np.full(shape, d.index, dtype=np.int64)
    if isinstance(d, Empirical):
        u = rng.random(shape)
        idx = np.searchsorted(d.cdf, u, side="right")
        return np.minimum(idx, t.rows - 1).astype(np.int64)
    return rng.integers(0, t.rows, size=shape, dtype=np.int64)


def generate_queries(w: Workload, seed: int, only: Sequence[str] | None = None) -> QueryBatch:
    """Draw one query batch. ``only`` restricts generation to a subset of table ids;
    the matrices produced for those tables are the same as in a full batch."""
    wanted = None if only is None else set(only)
    out = {}
    for pos, t in enumerate(w.tables):
        if wanted is not None and t.id not in wanted:
            continue
        out[t.id] = sample_table(t, w.batch_size, table_rng(seed, pos))
    return QueryBatch(indices=out, seed=int(seed))


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, path)])
    return int(ss.generate_state(1, np.uint64)[0])

