"""embedshard command line.

Exit codes: 0 success, 1 simulation/validation failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from itertools import combinations

from .costmodel import CostModel, CostModelError, FitError, calibrate
from .engine import EngineError, TimingConfig, random_store, simulate
from .io import write_atomic
from .machine import MachineError, MachineModel, estimate_breakdown, get_machine
from .partitioner import DEFAULT_LIF_THRESHOLD, Plan, PlanError, plan_asymmetric, plan_symmetric, validate_plan
from .sweep import CSV_HEADER, normalize_distribution, run_sweep, to_csv
from .workload import WorkloadError, load_workload

log = logging.getLogger("embedshard")


class UsageError(Exception):
    pass


class Failure(Exception):
    pass


def _lif_threshold(s: str) -> float:
    v = float(s)
    if not v > 1:
        raise argparse.ArgumentTypeError(f"--lif-threshold must be > 1, got {s}")
    return v


def _int_list(s: str) -> list[int]:
    try:
        out = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if not out or any(x < 1 for x in out):
        raise argparse.ArgumentTypeError("batch sizes must be positive and non-empty")
    return out


def _machine(args) -> MachineModel:
    return get_machine(args.machine)


def _timing(args, m: MachineModel) -> TimingConfig:
    if getattr(args, "timing", None):
        return TimingConfig.load(args.timing, machine=m)
    return TimingConfig.from_machine(m)


def _embed_dims(w) -> dict[int, int]:
    out = {}
    for t in w.tables:
        out.setdefault(t.embed_dim, t.elem_bytes)
    return out


def _costmodel(args, w, m, timing) -> CostModel:
    if getattr(args, "costmodel", None):
        return CostModel.load(args.costmodel)
    log.info("no --costmodel given; calibrating against the timing model")
    return calibrate(m, _embed_dims(w), timing, seed=args.seed)


def _make_plan(args, w, m, cm) -> Plan:
    if args.mode == "symmetric":
        return plan_symmetric(w, m, cm)
    return plan_asymmetric(w, m, cm, args.lif_threshold)


def _emit(args, text: str) -> None:
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def cmd_fit_costmodel(args) -> int:
    w = load_workload(args.workload)
    m = _machine(args)
    timing = _timing(args, m)
    cm = calibrate(m, _embed_dims(w), timing, batches=args.batches, seed=args.seed)
    _emit(args, json.dumps(cm.to_dict(), indent=2) + "\n")
    for (mn, s, e), c in sorted(cm.entries.items(), key=lambda kv: (kv[0][1].value, kv[0][2])):
        print(f"{mn} {s.value:<6} E={e:<4} beta0={c.beta0:.4g} beta1={c.beta1:.4g} beta2={c.beta2:.4g}", file=sys.stderr)
    return 0


def cmd_plan(args) -> int:
    w = load_workload(args.workload)
    m = _machine(args)
    cm = _costmodel(args, w, m, _timing(args, m))
    plan = _make_plan(args, w, m, cm)
    _emit(args, json.dumps(plan.to_dict(), indent=2) + "\n")
    stream = sys.stderr if not args.out else sys.stdout
    for k, t in enumerate(plan.predicted_core_times):
        print(f"core {k:3d}: {t * 1e6:10.3f} us", file=stream)
    print(f"predicted LIF: {plan.predicted_lif:.4f}", file=stream)
    if plan.fallback_tables:
        print(f"symmetric fallback: {', '.join(plan.fallback_tables)}", file=stream)
    return 0


def cmd_validate(args) -> int:
    w = load_workload(args.workload)
    m = _machine(args)
    plan = Plan.load(args.plan)
    problems = validate_plan(plan, w, m)
    for p in problems:
        print(p)
    if problems:
        return 1
    print("ok")
    return 0


def cmd_simulate(args) -> int:
    w = load_workload(args.workload)
    if args.batch_size:
        w = w.with_batch_size(args.batch_size)
    m = _machine(args)
    timing = _timing(args, m)
    if args.plan:
        plan = Plan.load(args.plan)
    else:
        plan = _make_plan(args, w, m, _costmodel(args, w, m, timing))
    problems = validate_plan(plan, w, m)
    if problems:
        raise Failure("plan is invalid:\n  " + "\n  ".join(problems))
    store = random_store(w, args.seed) if args.check else None
    res = simulate(plan, w, timing, batches=args.batches, seed=args.seed, store=store)
    doc = res.to_dict()
    doc["mode"] = plan.kind
    _emit(args, json.dumps(doc, indent=2) + "\n")
    stream = sys.stderr if not args.out else sys.stdout
    print(",".join(CSV_HEADER[:-1]), file=stream)
    print(
        f"{w.batch_size},{plan.kind},declared,{res.p99!r},{res.avg_throughput!r},{res.lif_observed!r},{res.setup_s!r}",
        file=stream,
    )
    return 0


def cmd_sweep(args) -> int:
    w = load_workload(args.workload)
    m = _machine(args)
    timing = _timing(args, m)
    cm = _costmodel(args, w, m, timing)
    try:
        dists = [normalize_distribution(d) for d in args.distributions.split(",") if d.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = run_sweep(
        w, m, cm, timing, args.batch_sizes, dists, batches=args.batches, seed=args.seed, lif_threshold=args.lif_threshold
    )
    _emit(args, to_csv(rows))
    return 0


def cmd_estimate(args) -> int:
    w = load_workload(args.workload)
    if args.batch_size:
        w = w.with_batch_size(args.batch_size)
    machines = [get_machine(x) for x in args.machine]
    ests = [estimate_breakdown(m, w) for m in machines]
    lines = [f"{'machine':<20} {'batch_time_s':>14} {'throughput_qps':>16} {'l1_tables':>9}"]
    for e in ests:
        lines.append(f"{e.machine:<20} {e.batch_time:>14.6g} {e.throughput:>16.6g} {len(e.l1_tables):>9d}")
    if len(ests) > 1:
        lines.append("")
        lines.append(f"{'ratio':<41} {'value':>10}")
        for a, b in combinations(ests, 2):
            lines.append(f"{a.machine + ' / ' + b.machine:<41} {a.throughput / b.throughput:>10.6f}")
    _emit(args, "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embedshard", description="Plan and simulate sharded embedding lookups.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, costmodel=True, timing=True):
        sp.add_argument("--workload", required=True, help="workload JSON file")
        sp.add_argument("--machine", default="ascend910-like", help="preset name or machine JSON file")
        if costmodel:
            sp.add_argument("--costmodel", help="cost model JSON (calibrated on the fly if omitted)")
        if timing:
            sp.add_argument("--timing", help="timing config JSON; missing fields derive from the machine")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output file (stdout if omitted)")

    def planning(sp):
        sp.add_argument("--mode", choices=("symmetric", "asymmetric"), default="asymmetric")
        sp.add_argument("--lif-threshold", type=_lif_threshold, default=DEFAULT_LIF_THRESHOLD)

    sp = sub.add_parser("fit-costmodel", help="fit cost coefficients against the timing simulator")
    common(sp, costmodel=False)
    sp.add_argument("--batches", type=int, default=100)
    sp.set_defaults(func=cmd_fit_costmodel)

    sp = sub.add_parser("plan", help="build a plan")
    common(sp)
    planning(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="simulate a plan (or plan then simulate)")
    common(sp)
    planning(sp)
    sp.add_argument("--plan", help="plan JSON (planned from --costmodel/--mode if omitted)")
    sp.add_argument("--batches", type=int, default=100)
    sp.add_argument("--batch-size", type=int, help="override the workload batch size")
    sp.add_argument("--check", action="store_true", help="also execute functionally and compare with the reference")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="batch-size sweep; writes CSV")
    common(sp)
    sp.add_argument("--batch-sizes", type=_int_list, default=[1024, 2048, 4096, 8192])
    sp.add_argument("--distributions", default="uniform,fixed")
    sp.add_argument("--batches", type=int, default=100)
    sp.add_argument("--lif-threshold", type=_lif_threshold, default=DEFAULT_LIF_THRESHOLD)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("estimate", help="conflict-free bandwidth estimate per machine")
    sp.add_argument("--workload", required=True)
    sp.add_argument("--machine", action="append", required=True, help="repeatable")
    sp.add_argument("--batch-size", type=int, help="override the workload batch size")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("validate", help="check a plan's invariants")
    sp.add_argument("--workload", required=True)
    sp.add_argument("--machine", default="ascend910-like")
    sp.add_argument("--plan", required=True)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, WorkloadError, MachineError, CostModelError, FitError, PlanError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (Failure, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
