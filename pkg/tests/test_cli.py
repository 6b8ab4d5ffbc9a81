import json
import subprocess
import sys

import numpy as np
import pytest

from lagflow import cli
from lagflow.errors import NumericalAbort
from lagflow.flow import FlowDomain, PotentialState
from lagflow.io import read_csv


def run(tmp_path, command, cfg, name="out", extra=()):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = cli.main([command, "--config", str(cfg_path), "--out", str(out), "--quiet", *extra])
    return code, out


FLOW_QUAD = {"schema_version": 1, "mode": "periodic", "n": 2, "R": 3.141592653589793, "resolution": 16,
             "A0": [[1.0, 0.0], [0.0, -0.4]], "initial": {"name": "zero"}, "T_end": 0.5, "sample_dt": 0.25}


def test_flow_quadratic_passes_and_writes_artifacts(tmp_path):
    code, out = run(tmp_path, "flow", dict(FLOW_QUAD, snapshot=True))
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdicts"]["exact_quadratic"] and summary["passed"]
    cols = read_csv(out / "monitors.csv")
    np.testing.assert_allclose(cols["t"], [0, 0.25, 0.5])
    assert (out / "monitors_plot.py").exists() and (out / "final_state.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "flow" and man["exit_code"] == 0
    assert set(man["outputs"]) == {"monitors.csv", "summary.json", "monitors_plot.py", "final_state.csv"}
    for key in ("config_digest", "seed", "version", "started", "finished", "config_path"):
        assert key in man


def test_flow_bad_dt_is_input_error(tmp_path):
    code, out = run(tmp_path, "flow", dict(FLOW_QUAD, dt=0.1))
    assert code == 2
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 2


def test_schema_errors_exit_two(tmp_path):
    assert run(tmp_path, "flow", dict(FLOW_QUAD, bogus=1), "a")[0] == 2
    assert run(tmp_path, "flow", dict(FLOW_QUAD, schema_version=2), "b")[0] == 2
    cfg = dict(FLOW_QUAD)
    del cfg["R"]
    assert run(tmp_path, "flow", cfg, "c")[0] == 2
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert cli.main(["cone", "--config", str(bad), "--out", str(tmp_path / "d"), "--quiet"]) == 2


def test_failed_expectation_exits_one(tmp_path):
    cfg = {"schema_version": 1, "mode": "periodic", "n": 1, "R": 3.141592653589793, "resolution": 64,
           "A0": [[0.5]], "initial": {"name": "sine", "amplitude": 0.2}, "T_end": 0.2,
           "expect": {"D2_ratio_max": 0.01}}
    assert run(tmp_path, "flow", cfg)[0] == 1


def test_numerical_abort_exits_three_and_dumps_state(tmp_path, monkeypatch):
    dom = FlowDomain("periodic", 1, 1.0, 16)
    state = PotentialState(dom, 0.25, np.zeros(16))

    def boom(cfg):
        raise NumericalAbort("synthetic blow-up", state=state)
    monkeypatch.setattr(cli, "run_flow", boom)
    code, out = run(tmp_path, "flow", FLOW_QUAD)
    assert code == 3
    assert "abort_state.csv" in json.loads((out / "manifest.json").read_text())["outputs"]
    assert read_csv(out / "abort_state.csv")["u"].shape == (16,)


def test_verify_reports_are_byte_identical(tmp_path):
    cfg = {"schema_version": 1, "samples": 2000, "seed": 5}
    code_a, a = run(tmp_path, "verify", cfg, "a")
    code_b, b = run(tmp_path, "verify", cfg, "b")
    assert code_a == code_b == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_digest"] == mb["config_digest"]


def test_verify_negative_control_exits_one(tmp_path):
    cfg = {"schema_version": 1, "samples": 2000, "checks": ["max_principle_form"], "c_param": 0.0}
    assert run(tmp_path, "verify", cfg)[0] == 1


def test_seed_override_changes_digest(tmp_path):
    cfg = {"schema_version": 1, "samples": 500, "checks": ["sos_identity"]}
    _, a = run(tmp_path, "verify", cfg, "a", ["--seed", "1"])
    _, b = run(tmp_path, "verify", cfg, "b", ["--seed", "2"])
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["seed"] == 1 and mb["seed"] == 2 and ma["config_digest"] != mb["config_digest"]


def test_cone_report(tmp_path):
    cfg = {"schema_version": 1, "delta1": 0.5, "delta2": 0.5, "samples": 5000, "seed": 7}
    code, out = run(tmp_path, "cone", cfg, "a")
    rep = json.loads((out / "cone.json").read_text())
    assert code == 0 and abs(rep["tau"] - 2.0) <= 1e-12 and rep["violations"] == 0
    _, again = run(tmp_path, "cone", cfg, "b")
    assert (out / "cone.json").read_bytes() == (again / "cone.json").read_bytes()
    code, _ = run(tmp_path, "cone", dict(cfg, tau_factor=3.0), "c")
    assert code == 1


def test_booster_degenerate_csv(tmp_path):
    code, out = run(tmp_path, "booster", {"schema_version": 1, "kind": "outer", "k": 4, "tau": 1.0})
    assert code == 0
    cols = read_csv(out / "booster.csv")
    np.testing.assert_allclose(cols["F"], 0.5 * cols["r"] ** 2, atol=1e-10)
    assert json.loads((out / "booster.json").read_text())["passed"]


def test_expander_command(tmp_path):
    cfg = {"schema_version": 1, "mode": "interval", "n": 1, "R": 3.0, "resolution": 128,
           "U0": {"name": "quadratic", "a": 0.8}, "k_list": [], "window": 1.0, "mu_schedule": [1.0, 1.5]}
    code, out = run(tmp_path, "expander", cfg)
    assert code == 0
    prof = read_csv(out / "profile.csv")
    assert np.abs(prof["residual"][np.abs(prof["x"]) <= 1.0]).max() <= 1e-8
    trace = read_csv(out / "residual_trace.csv")
    assert np.all(np.isinf(trace["k"])) and len(trace["mu"]) == 2


def test_regularize_command(tmp_path):
    cfg = {"schema_version": 1, "n": 2, "A": [[1.0, 0.0], [0.0, 1.0]], "L": 7.0, "h": 0.1,
           "eps1": 0.5, "eps2": 1.0, "k": 4}
    code, out = run(tmp_path, "regularize", cfg)
    rep = json.loads((out / "regularization.json").read_text())
    assert code == 0 and rep["passed"] and rep["sigma"] <= 0.25
    code, out = run(tmp_path, "regularize", dict(cfg, A=[[1.0, 0.0], [0.0, -1.0]]), "bad")
    assert code == 2


def test_module_entry_point(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"schema_version": 1, "kind": "inner", "k": 4, "tau": 2.0}))
    proc = subprocess.run([sys.executable, "-m", "lagflow.cli", "booster", "--config", str(cfg_path),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "booster: passed = True" in proc.stdout
