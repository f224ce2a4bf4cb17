from pathlib import Path

import pytest

from embedshard.costmodel import CostModel
from embedshard.machine import MachineModel
from embedshard.workload import TableSpec, Workload

ROOT = Path(__file__).resolve().parent.parent
WORKLOADS = ROOT / "workloads"


def pytest_configure(config):
    for n in range(1, 11):
        config.addinivalue_line("markers", f"criterion_{n}: acceptance criterion {n}")
    config._criteria = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for kw in report.keywords:
        if kw.startswith("criterion_"):
            n = int(kw.split("_")[1])
            crit = pytest_runtest_logreport.results.setdefault(n, [])
            crit.append((report.nodeid, report.outcome))


pytest_runtest_logreport.results = {}


def pytest_terminal_summary(terminalreporter):
    results = pytest_runtest_logreport.results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        outcomes = [o for _, o in results[n]]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} ({len(outcomes)} checks)")


def make_machine(**kw) -> MachineModel:
    base = dict(
        name="test",
        cores=4,
        l1_bytes=4096,
        ub_bytes=1024,
        gm_bandwidth=32e9,
        gm_access_latency=40e-9,
        l1_bandwidth=64e9,
        row_access_bytes_min=32,
        conflict_penalty=1.0,
        l1_persistence=True,
    )
    base.update(kw)
    return MachineModel(**base)


def flat_costs(machine="test", embed_dims=(16,), gm=(1e-6, 40e-9, 0.0), gm_ub=(1e-6, 2e-9, 1e-6), l1=(1e-6, 8e-9, 0.0), l1_ub=(1e-6, 2e-9, 1e-6)):
    return CostModel.from_betas(machine, embed_dims, {"GM": gm, "GM_UB": gm_ub, "L1": l1, "L1_UB": l1_ub})


@pytest.fixture
def machine():
    return make_machine()


@pytest.fixture
def tiny_workload():
    return Workload(
        name="tiny",
        tables=(TableSpec("a", rows=10, embed_dim=16), TableSpec("b", rows=50, embed_dim=16, seq_len=2)),
        batch_size=8,
    )
