import csv
import json
import math

import pytest

from bsrlab.cli import main
from bsrlab.exposure import ParameterList
from bsrlab.experiments import ExperimentPlan, ReportRecord, figure_curves, run_experiment


def test_ode_tc_json(capsys):
    assert main(["ode", "tc", "--rule", "er4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["tc"] - 0.5) < 1e-6


def test_theory_on_unbounded_rule_is_usage_error(capsys):
    assert main(["ode", "tc", "--rule", "product"]) == 2
    assert "theory requires bounded-size rule" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--bogus"])
    assert exc.value.code == 2


def test_unknown_suite_exits_2(capsys):
    assert main(["verify", "no-such-suite"]) == 2


def test_simulate_deterministic_with_sidecar(tmp_path):
    outs = []
    for d in ("a", "b"):
        argv = ["simulate", "--rule", "bf", "--n", "1e4", "--tmax", "1.2", "--seed", "7",
                "--snapshots", "12", "--out", str(tmp_path / d)]
        assert main(argv) == 0
        outs.append((tmp_path / d / "bf_n10000_seed7.csv").read_bytes())
    assert outs[0] == outs[1]
    assert b"\r" not in outs[0]
    rows = list(csv.reader(outs[0].decode().splitlines()))
    assert rows[0][:4] == ["t", "L1", "L2", "Nomega"]
    assert len(rows) == 13
    meta = json.loads((tmp_path / "a" / "bf_n10000_seed7.meta.json").read_text())
    assert meta["seed"] == 7 and meta["snapshot_steps"][-1] == 12000


def test_simulate_rejects_bad_size():
    with pytest.raises(SystemExit):
        main(["simulate", "--n", "1.5"])


def test_verify_combinatorics_json(tmp_path):
    out = tmp_path / "rep.json"
    assert main(["verify", "combinatorics", "--out", str(out)]) == 0
    recs = json.loads(out.read_text())
    assert all(r["passed"] for r in recs)
    assert all("version" in r and "seeds" in r for r in recs)


def test_exposure_track_then_sample(tmp_path):
    p = tmp_path / "s.json"
    assert main(["exposure", "track", "--rule", "bf", "--n", "5000", "--out", str(p)]) == 0
    params = ParameterList.load(p)
    assert params.size() == 5000
    sizes = tmp_path / "sizes.csv"
    assert main(["exposure", "sample", "--params", str(p), "--out", str(sizes)]) == 0
    vals = [int(r[0]) for r in csv.reader(sizes.read_text().splitlines()[1:])]
    assert sum(vals) == 5000
    assert main(["exposure", "sample"]) == 2


def test_bp_survival_er(capsys):
    assert main(["bp", "survival", "--rule", "er4", "--t", "0.6"]) == 0
    rho = json.loads(capsys.readouterr().out)["rho"]
    assert abs(1 - rho - math.exp(-1.2 * rho)) < 1e-9


def test_report_with_no_cells(tmp_path):
    assert main(["report", "--rule", "er4,product", "--n", "2000", "--eps", "", "--seeds", "1",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "records.csv").read_text().startswith("cell,quantity")
    head = (tmp_path / "curves.csv").read_text().splitlines()[0]
    assert head == "t,er4,product"
    assert "matplotlib" in (tmp_path / "plot_curves.py").read_text()


def test_empty_plan_gives_no_records():
    assert run_experiment(ExperimentPlan([], 10**6, [0.05])) == []


def test_small_cells_are_skipped_with_warning():
    with pytest.warns(UserWarning):
        recs = run_experiment(ExperimentPlan(["er4"], 1000, [0.05], seeds=1))
    assert len(recs) == 2
    assert all(r.quantity == "skipped" and r.detail["warning"] for r in recs)


def test_record_line_format():
    r = ReportRecord("c", "q", 1.0, 2.0, "tol", False)
    assert r.line().startswith("FAIL c: q")


def test_er_curve_at_t1():
    rows = figure_curves(["er4"], 10**6, [0.25, 1.0]).splitlines()
    assert rows[0] == "t,er4"
    low, high = (float(r.split(",")[1]) for r in rows[1:])
    assert low < 0.01
    # root of 1 - rho = exp(-2 rho)
    assert abs(high - 0.7968) < 0.01
