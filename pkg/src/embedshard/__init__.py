"""Plan and simulate sharded embedding-table lookups on multicore accelerators."""

from .costmodel import CostModel, Measurement, StrategyKind, estimate_table_cost, fit, measure_for_fit
from .engine import SimResult, TimingConfig, execute_plan, percentile, reference_execute, simulate
from .machine import MachineModel, builtin_machines, theoretical_estimate
from .partitioner import Chunk, Plan, chunk_table, lif, plan_asymmetric, plan_symmetric, validate_plan
from .workload import Empirical, Fixed, TableSpec, Uniform, Workload, generate_queries, load_workload, table_bytes

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "CostModel",
    "Empirical",
    "Fixed",
    "MachineModel",
    "Measurement",
    "Plan",
    "SimResult",
    "StrategyKind",
    "TableSpec",
    "TimingConfig",
    "Uniform",
    "Workload",
    "builtin_machines",
    "chunk_table",
    "estimate_table_cost",
    "execute_plan",
    "fit",
    "generate_queries",
    "lif",
    "load_workload",
    "measure_for_fit",
    "percentile",
    "plan_asymmetric",
    "plan_symmetric",
    "reference_execute",
    "simulate",
    "table_bytes",
    "theoretical_estimate",
    "validate_plan",
]
