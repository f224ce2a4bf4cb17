import json
from dataclasses import replace

import pytest

from embedshard.cli import main
from embedshard.engine import TimingConfig
from embedshard.machine import get_machine
from embedshard.partitioner import Plan, validate_plan
from embedshard.sweep import CSV_HEADER, apply_distribution, pareto_flags, run_sweep, to_csv
from embedshard.workload import Fixed, TableSpec, Workload, load_workload, workload_to_dict

from .conftest import WORKLOADS, flat_costs, make_machine

PRESET = "ascend910-like"


@pytest.fixture
def files(tmp_path):
    w = Workload(
        "cli",
        (TableSpec("a", rows=2000, seq_len=2), TableSpec("b", rows=500), TableSpec("c", rows=100000)),
        batch_size=256,
    )
    wp = tmp_path / "w.json"
    wp.write_text(json.dumps(workload_to_dict(w)))
    cp = tmp_path / "cm.json"
    flat_costs(machine=PRESET).save(cp)
    return tmp_path, wp, cp


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ---- sweep -----------------------------------------------------------------------


def test_pareto_dominance():
    assert pareto_flags([(1.0, 10.0), (2.0, 5.0), (0.5, 1.0)]) == [True, False, True]
    assert pareto_flags([(1.0, 1.0), (1.0, 1.0)]) == [True, True]


def sweep_rows(threads=1):
    m = make_machine(cores=4)
    w = Workload("w", (TableSpec("a", rows=100, seq_len=2), TableSpec("b", rows=1000)), batch_size=8)
    return run_sweep(
        w, m, flat_costs(), TimingConfig.from_machine(m, jitter=0.05), [16, 64], ["uniform", "fixed"], threads=threads
    )


def test_sweep_cardinality_and_order():
    rows = sweep_rows()
    assert len(rows) == 8
    assert [(r.batch, r.distribution, r.mode) for r in rows[:4]] == [
        (16, "uniform", "symmetric"),
        (16, "uniform", "asymmetric"),
        (16, "fixed", "symmetric"),
        (16, "fixed", "asymmetric"),
    ]


def test_sweep_pareto_per_distribution():
    rows = sweep_rows()
    for dist in ("uniform", "fixed"):
        group = [r for r in rows if r.distribution == dist]
        assert [r.pareto for r in group] == pareto_flags([(r.p99_s, r.throughput_qps) for r in group])


def test_sweep_csv_deterministic():
    a, b, c = to_csv(sweep_rows()), to_csv(sweep_rows()), to_csv(sweep_rows(threads=4))
    assert a == b == c
    assert a.splitlines()[0] == ",".join(CSV_HEADER)


def test_apply_distribution(tiny_workload):
    assert all(t.distribution == Fixed(0) for t in apply_distribution(tiny_workload, "fixed").tables)
    assert apply_distribution(tiny_workload, "dataset") is tiny_workload
    with pytest.raises(ValueError):
        apply_distribution(tiny_workload, "bogus")


# ---- CLI -------------------------------------------------------------------------


def test_cli_unknown_machine(files, capsys):
    _, wp, cp = files
    code, _, err = run(capsys, "plan", "--workload", wp, "--machine", "nope", "--costmodel", cp)
    assert code == 2
    assert PRESET in err and "gpu-like" in err


def test_cli_lif_threshold_rejected(files, capsys):
    _, wp, cp = files
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--workload", str(wp), "--costmodel", str(cp), "--mode", "asymmetric", "--lif-threshold", "1.0"])
    assert exc.value.code == 2
    assert "must be > 1" in capsys.readouterr().err


@pytest.mark.parametrize("mode", ["symmetric", "asymmetric"])
def test_cli_plan_then_validate(files, capsys, mode):
    tmp, wp, cp = files
    out = tmp / f"{mode}.json"
    code, stdout, _ = run(capsys, "plan", "--workload", wp, "--costmodel", cp, "--mode", mode, "--out", out)
    assert code == 0 and "predicted LIF" in stdout
    plan = Plan.load(out)
    assert validate_plan(plan, load_workload(wp), get_machine(PRESET)) == []
    code, stdout, _ = run(capsys, "validate", "--workload", wp, "--plan", out)
    assert (code, stdout.strip()) == (0, "ok")


def test_cli_validate_failure(files, capsys):
    tmp, wp, cp = files
    out = tmp / "p.json"
    run(capsys, "plan", "--workload", wp, "--costmodel", cp, "--out", out)
    d = json.loads(out.read_text())
    d["assignments"] = d["assignments"][1:]
    out.write_text(json.dumps(d))
    code, stdout, _ = run(capsys, "validate", "--workload", wp, "--plan", out)
    assert code == 1 and "not covered" in stdout
    code, _, err = run(capsys, "simulate", "--workload", wp, "--plan", out)
    assert code == 1 and "invalid" in err


def test_cli_simulate(files, capsys):
    tmp, wp, cp = files
    out = tmp / "sim.json"
    code, stdout, _ = run(capsys, "simulate", "--workload", wp, "--costmodel", cp, "--check", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["batches"] == 100 and doc["mode"] == "asymmetric"
    assert stdout.splitlines()[0] == ",".join(CSV_HEADER[:-1])


def test_cli_sweep_overwrites(files, capsys):
    tmp, wp, cp = files
    out = tmp / "s.csv"
    argv = ["sweep", "--workload", wp, "--costmodel", cp, "--batch-sizes", "64,128", "--distributions", "uniform,fixed", "--out", out]
    assert run(capsys, *argv)[0] == 0
    first = out.read_bytes()
    assert run(capsys, *argv)[0] == 0
    assert out.read_bytes() == first
    assert len(first.decode().splitlines()) == 1 + 8


def test_cli_sweep_bad_distribution(files, capsys):
    _, wp, cp = files
    code, _, err = run(capsys, "sweep", "--workload", wp, "--costmodel", cp, "--distributions", "zipfy")
    assert code == 2 and "unknown distribution" in err


def test_cli_fit_costmodel(files, capsys):
    tmp, wp, _ = files
    out = tmp / "fitted.json"
    code, _, err = run(capsys, "fit-costmodel", "--workload", wp, "--out", out)
    assert code == 0 and "beta1" in err
    strategies = {e["strategy"] for e in json.loads(out.read_text())["entries"]}
    assert strategies == {"GM", "GM_UB", "L1", "L1_UB"}


def machine_file(tmp, name, **kw):
    p = tmp / f"{name}.json"
    p.write_text(json.dumps(replace(make_machine(name=name), **kw).to_dict()))
    return p


def estimate_lines(capsys, *argv):
    code, out, _ = run(capsys, "estimate", *argv)
    assert code == 0
    return out.splitlines()


def test_cli_estimate_ratio(files, capsys):
    tmp, wp, _ = files
    fast = machine_file(tmp, "fast", gm_bandwidth=1.3e12, l1_persistence=False)
    slow = machine_file(tmp, "slow", gm_bandwidth=1.0e12, l1_persistence=False)
    lines = estimate_lines(capsys, "--workload", wp, "--machine", fast, "--machine", slow)
    ratio = float(lines[-1].split()[-1])
    assert abs(ratio - 1.30) <= 1e-9


def test_cli_estimate_single_machine(files, capsys):
    _, wp, _ = files
    lines = estimate_lines(capsys, "--workload", wp, "--machine", PRESET)
    assert len(lines) == 2 and "ratio" not in "\n".join(lines)


def test_cli_estimate_persistence(tmp_path, capsys):
    w = Workload("r", (TableSpec("a", rows=100), TableSpec("b", rows=200)), batch_size=8192)
    wp = tmp_path / "w.json"
    wp.write_text(json.dumps(workload_to_dict(w)))
    on = machine_file(tmp_path, "on", l1_persistence=True)
    off = machine_file(tmp_path, "off", l1_persistence=False)
    lines = estimate_lines(capsys, "--workload", wp, "--machine", on, "--machine", off)
    thr = {ln.split()[0]: float(ln.split()[2]) for ln in lines[1:3]}
    assert thr["on"] >= thr["off"]
    assert float(lines[-1].split()[-1]) >= 1.0


def test_cli_shipped_workloads_load():
    for p in sorted(WORKLOADS.glob("*.json")):
        assert load_workload(p).tables


def test_cli_bad_workload(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    code, _, err = run(capsys, "plan", "--workload", p)
    assert code == 2 and err.startswith("error:")
