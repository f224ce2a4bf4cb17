"""Linear per-table P99 cost model and its least-squares fit.

For a table handled by one core with ``lookups`` lookups per batch::

    cost = beta0 + beta1 * lookups                    (GM, L1)
    cost = beta0 + beta1 * lookups + beta2 * rows     (GM_UB, L1_UB)

Coefficients are kept per (machine, strategy, embed_dim).
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "StrategyKind",
    "Coefficients",
    "CostModel",
    "Measurement",
    "CostModelError",
    "FitError",
    "estimate_table_cost",
    "fit",
    "measure_for_fit",
    "calibrate",
]


class CostModelError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class FitError(ValueError):
    pass


class StrategyKind(str, enum.Enum):
    GM = "GM"
    GM_UB = "GM_UB"
    L1 = "L1"
    L1_UB = "L1_UB"

    @property
    def is_ub(self) -> bool:
        return self in (StrategyKind.GM_UB, StrategyKind.L1_UB)

    @property
    def is_l1(self) -> bool:
        return self in (StrategyKind.L1, StrategyKind.L1_UB)

    @classmethod
    def parse(cls, s: "str | StrategyKind") -> "StrategyKind":
        if isinstance(s, StrategyKind):
            return s
        return cls(str(s).upper().replace("-", "_"))

    def __str__(self):
        return self.value


GM_PAIR = (StrategyKind.GM, StrategyKind.GM_UB)
L1_PAIR = (StrategyKind.L1, StrategyKind.L1_UB)


@dataclass(frozen=True)
class Coefficients:
    beta0: float
    beta1: float
    beta2: float = 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.beta0, self.beta1, self.beta2)


Key = tuple  # (machine, StrategyKind, embed_dim)


@dataclass(frozen=True)
class CostModel:
    entries: dict = field(default_factory=dict)

    @classmethod
    def from_betas(cls, machine: str, embed_dims: Iterable[int], betas: dict) -> "CostModel":
        """Same coefficients for every embed_dim; ``betas`` maps strategy -> (b0, b1[, b2])."""
        entries = {}
        for e in embed_dims:
            for s, b in betas.items():
                entries[(machine, StrategyKind.parse(s), int(e))] = Coefficients(*map(float, b))
        return cls(entries)

    def with_entry(self, machine: str, strategy: StrategyKind, embed_dim: int, coef: Coefficients) -> "CostModel":
        entries = dict(self.entries)
        entries[(machine, StrategyKind.parse(strategy), int(embed_dim))] = coef
        return replace(self, entries=entries)

    def coefficients(
        self, strategy: StrategyKind, embed_dim: int | None = None, machine: str | None = None
    ) -> Coefficients:
        strategy = StrategyKind.parse(strategy)
        if machine is not None and embed_dim is not None:
            c = self.entries.get((machine, strategy, int(embed_dim)))
            if c is not None:
                return c
        found = [
            c
            for (mn, s, e), c in self.entries.items()
            if s == strategy
            and (embed_dim is None or e == embed_dim)
            and (machine is None or mn == machine)
        ]
        if len(found) != 1:
            what = "no" if not found else "ambiguous"
            raise CostModelError(
                f"{what} coefficients for (strategy={strategy.value}, embed_dim={embed_dim})"
                + (f" on machine {machine!r}" if machine else "")
            )
        return found[0]

    def covers(self, machine: str, embed_dim: int, strategies: Iterable[StrategyKind] = tuple(StrategyKind)) -> bool:
        return all((machine, s, int(embed_dim)) in self.entries for s in strategies)

    def to_dict(self) -> dict:
        rows = []
        for (mn, s, e), c in sorted(self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
            rows.append(
                {"machine": mn, "strategy": s.value, "embed_dim": e, "beta0": c.beta0, "beta1": c.beta1, "beta2": c.beta2}
            )
        return {"entries": rows}

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        entries = {}
        for r in d["entries"]:
            key = (str(r["machine"]), StrategyKind.parse(r["strategy"]), int(r["embed_dim"]))
            entries[key] = Coefficients(float(r["beta0"]), float(r["beta1"]), float(r.get("beta2", 0.0)))
        return cls(entries)

    def save(self, path: str | Path) -> None:
        from .io import write_atomic

        write_atomic(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CostModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_table_cost(
    cm: CostModel,
    strategy: StrategyKind,
    lookups: int,
    rows: int = 0,
    *,
    embed_dim: int | None = None,
    machine: str | None = None,
) -> float:
    """Predicted P99 seconds for one table (or chunk) on one core."""
    strategy = StrategyKind.parse(strategy)
    c = cm.coefficients(strategy, embed_dim, machine)
    cost = c.beta0 + c.beta1 * lookups
    if strategy.is_ub:
        cost += c.beta2 * rows
    return cost


# ---------------------------------------------------------------------------
# Fitting


@dataclass(frozen=True)
class Measurement:
    strategy: StrategyKind
    lookups: int
    rows: int
    observed_p99: float

    def __post_init__(self):
        if not self.observed_p99 > 0:
            raise ValueError(f"observed_p99 must be positive, got {self.observed_p99}")


def fit(measurements: Sequence[Measurement], strategy: StrategyKind) -> Coefficients:
    """Ordinary least squares for one strategy's coefficients.

    Regressors that never vary across the measurements cannot be told apart
    from the intercept; their coefficient is pinned to 0. At least one
    regressor must vary. Negative coefficients are clamped to 0.
    """
    strategy = StrategyKind.parse(strategy)
    ms = [m for m in measurements if StrategyKind.parse(m.strategy) == strategy]
    names = ["lookups", "rows"] if strategy.is_ub else ["lookups"]
    needed = len(names) + 1
    if len(ms) < needed:
        raise FitError(
            f"{strategy.value}: {len(ms)} measurements for {needed} coefficients (design is rank deficient)"
        )
    y = np.array([m.observed_p99 for m in ms], dtype=np.float64)
    cols = {
        "lookups": np.array([m.lookups for m in ms], dtype=np.float64),
        "rows": np.array([m.rows for m in ms], dtype=np.float64),
    }
    varying = [n for n in names if np.ptp(cols[n]) > 0]
    pinned = [n for n in names if n not in varying]
    if not varying:
        raise FitError(f"{strategy.value}: no regressor varies across measurements (design has rank 1)")
    if pinned:
        logger.warning("%s: %s constant across measurements, coefficient pinned to 0", strategy.value, pinned)

    # center and scale columns for conditioning; the intercept is recovered after
    X = np.column_stack([cols[n] for n in varying])
    mean = X.mean(axis=0)
    Xc = X - mean
    scale = np.linalg.norm(Xc, axis=0)
    Xs = Xc / scale
    ymean = y.mean()
    sol, _, rank, _ = np.linalg.lstsq(Xs, y - ymean, rcond=None)
    if rank < len(varying):
        raise FitError(
            f"{strategy.value}: design matrix has rank {rank + 1} < {len(varying) + 1} coefficients"
        )
    slopes = sol / scale
    intercept = ymean - float(slopes @ mean)

    beta = {"beta0": intercept, "lookups": 0.0, "rows": 0.0}
    beta.update(dict(zip(varying, slopes.tolist())))
    out = [beta["beta0"], beta["lookups"], beta["rows"]]
    for i, v in enumerate(out):
        if v < 0:
            logger.warning("%s: negative beta%d=%g clamped to 0", strategy.value, i, v)
            out[i] = 0.0
    return Coefficients(*out)


def measure_for_fit(
    machine,
    table,
    strategy: StrategyKind,
    grid: Sequence[tuple[int, int]],
    timing=None,
    batches: int = 100,
    seed: int = 0,
) -> list[Measurement]:
    """Simulated P99 of a single-table plan at each (batch size, cores) grid point.

    ``lookups`` is the busiest core's count, ``ceil(B / K) * seq_len``.
    """
    from .engine import TimingConfig, simulate
    from .partitioner import single_strategy_plan
    from .workload import Workload

    strategy = StrategyKind.parse(strategy)
    if timing is None:
        timing = TimingConfig.from_machine(machine)
    out = []
    for B, K in grid:
        w = Workload(name=f"probe-{table.id}", tables=(table,), batch_size=int(B))
        plan = single_strategy_plan(w, replace(machine, cores=int(K)), strategy)
        res = simulate(plan, w, timing, batches=batches, seed=seed)
        out.append(
            Measurement(
                strategy=strategy,
                lookups=math.ceil(B / K) * table.seq_len,
                rows=table.rows,
                observed_p99=res.p99,
            )
        )
    return out


DEFAULT_GRID = ((64, 1), (256, 1), (1024, 1), (4096, 1))


def calibrate(
    machine,
    embed_dims: dict[int, int],
    timing=None,
    grid: Sequence[tuple[int, int]] = DEFAULT_GRID,
    batches: int = 100,
    seed: int = 0,
) -> CostModel:
    """Fit all four strategies per embed_dim against the timing simulator.

    ``embed_dims`` maps embed_dim -> elem_bytes of the probe tables. Probe
    tables hold 1/4, 1/2 and all of the per-core L1 budget in rows, so that the
    row term of the UB variants is identifiable.
    """
    from .workload import TableSpec

    cm = CostModel()
    for E, eb in sorted(embed_dims.items()):
        row_bytes = E * eb
        full = max(3, machine.l1_bytes // row_bytes)
        probe_rows = sorted({max(1, full // 4), max(2, full // 2), full})
        for s in StrategyKind:
            ms = []
            for r in probe_rows:
                t = TableSpec(id=f"probe{E}x{r}", rows=r, embed_dim=E, elem_bytes=eb, seq_len=1)
                ms.extend(measure_for_fit(machine, t, s, grid, timing=timing, batches=batches, seed=seed))
            cm = cm.with_entry(machine.name, s, E, fit(ms, s))
    return cm
