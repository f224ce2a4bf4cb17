"""Parametric multicore accelerator description and a bandwidth-bound estimator."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .workload import Workload, placement_order

__all__ = [
    "MachineModel",
    "MachineError",
    "Estimate",
    "builtin_machines",
    "get_machine",
    "load_machine",
    "theoretical_estimate",
    "estimate_breakdown",
]

KiB = 1024
MiB = 1024 * KiB


class MachineError(ValueError):
    pass


@dataclass(frozen=True)
class MachineModel:
    name: str
    cores: int
    l1_bytes: int  # per-core persistent buffer
    ub_bytes: int  # per-core vector/shared buffer
    gm_bandwidth: float  # aggregate bytes/s
    gm_access_latency: float  # s per random small access
    l1_bandwidth: float  # bytes/s per core
    row_access_bytes_min: int = 32
    conflict_penalty: float = 1.0
    l1_persistence: bool = True

    def __post_init__(self):
        if int(self.cores) < 1:
            raise MachineError(f"machine {self.name!r}: cores must be >= 1")
        for f in ("l1_bytes", "ub_bytes", "row_access_bytes_min"):
            if int(getattr(self, f)) < 1:
                raise MachineError(f"machine {self.name!r}: {f} must be positive")
        for f in ("gm_bandwidth", "l1_bandwidth"):
            if not getattr(self, f) > 0:
                raise MachineError(f"machine {self.name!r}: {f} must be positive")
        if self.gm_access_latency < 0:
            raise MachineError(f"machine {self.name!r}: gm_access_latency must be >= 0")
        if self.conflict_penalty < 0:
            raise MachineError(f"machine {self.name!r}: conflict_penalty must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MachineModel":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise MachineError(f"unknown machine fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise MachineError(str(exc)) from exc


def builtin_machines() -> list[MachineModel]:
    # Capacities follow the published core description; bandwidth and latency
    # figures are editable defaults, not measured values.
    return [
        MachineModel(
            name="ascend910-like",
            cores=32,
            l1_bytes=1 * MiB,
            ub_bytes=256 * KiB,
            gm_bandwidth=1.2e12,
            gm_access_latency=40e-9,
            l1_bandwidth=256e9,
            row_access_bytes_min=32,
            conflict_penalty=1.0,
            l1_persistence=True,
        ),
        MachineModel(
            name="gpu-like",
            cores=108,
            l1_bytes=192 * KiB,
            ub_bytes=164 * KiB,
            gm_bandwidth=1.555e12,
            gm_access_latency=40e-9,
            l1_bandwidth=128e9,
            row_access_bytes_min=32,
            conflict_penalty=1.0,
            l1_persistence=False,
        ),
    ]


def get_machine(name_or_path: str) -> MachineModel:
    """Resolve a preset name, or load a machine JSON file."""
    for m in builtin_machines():
        if m.name == name_or_path:
            return m
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return load_machine(p)
    names = ", ".join(m.name for m in builtin_machines())
    raise MachineError(f"unknown machine {name_or_path!r}; available presets: {names}")


def load_machine(path: str | Path) -> MachineModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MachineError(f"cannot read machine file {path}: {exc}") from exc
    return MachineModel.from_dict(d)


@dataclass(frozen=True)
class Estimate:
    machine: str
    batch_time: float
    gm_time: float
    l1_time: float
    throughput: float
    l1_tables: tuple[str, ...]


def estimate_breakdown(m: MachineModel, w: Workload) -> Estimate:
    """Conflict-free, bandwidth-bound batch time under symmetric partitioning.

    Every core holds the same L1-resident tables (first-fit in placement order)
    and handles B/K samples. GM row reads are rounded up to the burst size and
    share the aggregate GM bandwidth; L1 reads go through each core's own port.
    The batch time is the slower of the two channels.
    """
    B, K = w.batch_size, m.cores
    budget = m.l1_bytes if m.l1_persistence else 0
    l1_tables = []
    gm_bytes = 0
    l1_bytes_per_core = 0.0
    for t in placement_order(w.tables):
        lookups = B * t.seq_len
        if t.bytes <= budget:
            budget -= t.bytes
            l1_tables.append(t.id)
            l1_bytes_per_core += lookups * t.row_bytes / K
        else:
            gm_bytes += lookups * max(t.row_bytes, m.row_access_bytes_min)
    gm_time = gm_bytes / m.gm_bandwidth
    l1_time = l1_bytes_per_core / m.l1_bandwidth
    batch_time = max(gm_time, l1_time)
    return Estimate(
        machine=m.name,
        batch_time=batch_time,
        gm_time=gm_time,
        l1_time=l1_time,
        throughput=B / batch_time,
        l1_tables=tuple(l1_tables),
    )


def theoretical_estimate(m: MachineModel, w: Workload) -> float:
    """Estimated queries per second, see :func:`estimate_breakdown`."""
    return estimate_breakdown(m, w).throughput
