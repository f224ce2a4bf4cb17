import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedshard.machine import MachineError, builtin_machines, estimate_breakdown, get_machine, theoretical_estimate
from embedshard.workload import TableSpec, Workload

from .conftest import make_machine


def gm_workload(batch=8192, rows=10**6):
    # 16 x fp16 = 32 bytes per row
    return Workload("w", (TableSpec("t", rows=rows, embed_dim=16, elem_bytes=2),), batch_size=batch)


def test_presets():
    ms = {m.name: m for m in builtin_machines()}
    asc = ms["ascend910-like"]
    assert (asc.cores, asc.l1_bytes, asc.ub_bytes) == (32, 1048576, 262144)
    assert asc.l1_persistence
    assert not ms["gpu-like"].l1_persistence
    assert len(ms) >= 2


def test_unknown_machine_lists_presets():
    with pytest.raises(MachineError, match="ascend910-like"):
        get_machine("tpu-v9")


def test_machine_file(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(make_machine(name="custom").to_dict()))
    assert get_machine(str(p)).name == "custom"


def test_invalid_machine():
    with pytest.raises(MachineError):
        make_machine(cores=0)
    with pytest.raises(MachineError):
        make_machine(gm_bandwidth=0)


def test_gm_bound_hand_computed():
    m = make_machine(cores=1, gm_bandwidth=32e9, l1_persistence=False)
    e = estimate_breakdown(m, gm_workload())
    assert math.isclose(e.batch_time, 8192 * 32 / 32e9, rel_tol=1e-12)
    assert math.isclose(e.batch_time, 8.192e-6, rel_tol=1e-12)
    assert math.isclose(e.throughput, 1e9, rel_tol=1e-12)


def test_l1_resident_same_bandwidth_same_estimate():
    w = gm_workload(rows=100)
    off = make_machine(cores=1, gm_bandwidth=32e9, l1_bandwidth=32e9, l1_persistence=False)
    on = replace(off, l1_persistence=True)
    assert estimate_breakdown(on, w).l1_tables == ("t",)
    assert theoretical_estimate(on, w) == theoretical_estimate(off, w)


def test_bandwidth_ratio_is_linear():
    m1 = make_machine(l1_persistence=False, gm_bandwidth=1e12)
    m2 = replace(m1, gm_bandwidth=1.25e12)
    r = theoretical_estimate(m2, gm_workload()) / theoretical_estimate(m1, gm_workload())
    assert math.isclose(r, 1.25, rel_tol=1e-12)


def test_burst_rounding():
    # 8-byte rows are charged as 32-byte bursts
    m = make_machine(cores=1, gm_bandwidth=32e9, l1_persistence=False, row_access_bytes_min=32)
    w = Workload("w", (TableSpec("t", rows=10**6, embed_dim=4, elem_bytes=2),), batch_size=1000)
    assert math.isclose(estimate_breakdown(m, w).gm_time, 1000 * 32 / 32e9, rel_tol=1e-12)


tables = st.lists(
    st.builds(
        lambda i, r, s: TableSpec(f"t{i}", rows=r, embed_dim=16, elem_bytes=2, seq_len=s),
        st.integers(0, 10**6),
        st.integers(1, 200_000),
        st.integers(1, 4),
    ),
    min_size=1,
    max_size=6,
    unique_by=lambda t: t.id,
)


@settings(max_examples=80, deadline=None)
@given(tables, st.integers(1, 4096), st.sampled_from(["gm_bandwidth", "l1_bandwidth"]), st.floats(1.0, 8.0))
def test_monotone_in_bandwidth(ts, batch, knob, factor):
    w = Workload("w", tuple(ts), batch_size=batch)
    m = make_machine(l1_bytes=1 << 20)
    faster = replace(m, **{knob: getattr(m, knob) * factor})
    assert theoretical_estimate(faster, w) >= theoretical_estimate(m, w) * (1 - 1e-12)


@settings(max_examples=60, deadline=None)
@given(tables, st.integers(1, 4096))
def test_doubling_batch_keeps_throughput(ts, batch):
    w = Workload("w", tuple(ts), batch_size=batch)
    m = make_machine(l1_bytes=1 << 20)
    a = theoretical_estimate(m, w)
    b = theoretical_estimate(m, w.with_batch_size(2 * batch))
    assert math.isclose(a, b, rel_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(tables, st.integers(1, 4096), st.integers(1, 256))
def test_burst_rounding_never_faster(ts, batch, burst):
    w = Workload("w", tuple(ts), batch_size=batch)
    m = make_machine(l1_bytes=1 << 20, row_access_bytes_min=1)
    rounded = replace(m, row_access_bytes_min=burst)
    assert estimate_breakdown(rounded, w).batch_time >= estimate_breakdown(m, w).batch_time
