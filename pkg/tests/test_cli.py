import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import ratefield.cli as cli


def write_network(path: Path, *, tau=0.5, f=0.5, g=1.0, j=0.0, sigma=0.0,
                  v0=0.1, mu0=0.2, input_kind=None):
    doc = {
        "populations": [{
            "tau": tau, "f": f,
            "sigmoid": {"kind": "tanh", "g": g},
            "input": input_kind or {"kind": "constant", "value": 0.0},
        }],
        "j_bar": [[j]], "sigma": [[sigma]],
        "initial_mean": [mu0], "initial_variance": [v0],
    }
    path.write_text(json.dumps(doc))


def write_config(path: Path, spec_name="net.json", **extra):
    cfg = {"spec": spec_name,
           "grid": {"t0": 0.0, "t_end": 2.0, "dt": 0.02},
           "solver": {"max_iter": 40},
           "out": str(path.parent / "out"), **extra}
    path.write_text(json.dumps(cfg))


@pytest.fixture
def runner():
    return CliRunner()


def test_solve_zero_coupling(tmp_path, runner):
    write_network(tmp_path / "net.json")
    write_config(tmp_path / "run.json")
    res = runner.invoke(cli.main, ["solve", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 0
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())
    assert report["report"]["converged"]
    assert report["report"]["iterations"] <= 2
    assert report["tool"]["name"] == "ratefield"
    assert report["config"]["grid"]["dt"] == 0.02
    means = (out / "means.csv").read_text().splitlines()
    assert means[0] == "t,mu_1"
    assert len(means) == 102
    assert (out / "cov_1.csv").read_text().splitlines()[0] == "t,s,c"


def test_solve_rejects_invalid_spec(tmp_path, runner):
    write_network(tmp_path / "net.json", tau=-1.0)
    write_config(tmp_path / "run.json")
    res = runner.invoke(cli.main, ["solve", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 1
    assert "tau" in res.output


def test_solve_missing_config(tmp_path, runner):
    res = runner.invoke(cli.main, ["solve", "--config", str(tmp_path / "nope.json")])
    assert res.exit_code == 1


def test_solve_unconverged_exit_code(tmp_path, runner):
    write_network(tmp_path / "net.json", j=1.0, sigma=1.0, g=5.0, tau=0.25, f=0.0,
                  v0=1.0, mu0=0.0)
    write_config(tmp_path / "run.json")
    cfg = json.loads((tmp_path / "run.json").read_text())
    cfg["solver"] = {"max_iter": 2}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    res = runner.invoke(cli.main, ["solve", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 2
    assert (tmp_path / "out" / "report.json").exists()   # artifacts still written


def test_stationary_classifies_trivial(tmp_path, runner):
    write_network(tmp_path / "net.json", tau=0.25, f=0.0, g=0.5, j=1.0, sigma=1.0,
                  v0=1.0, mu0=0.0)
    write_config(tmp_path / "run.json")
    cfg = json.loads((tmp_path / "run.json").read_text())
    cfg["grid"] = {"t0": 0.0, "t_end": 6.0, "dt": 0.02}
    cfg["stationary"] = {"burn_in": 3.0}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    res = runner.invoke(cli.main, ["stationary", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 0
    regime = json.loads((tmp_path / "out" / "regime.json").read_text())
    assert regime["classification"] == "trivial"
    assert regime["gain"] == [0.5]
    rows = (tmp_path / "out" / "stationary.csv").read_text().splitlines()
    assert rows[0] == "tau,c_1,defect"


def test_stationary_rejects_nonconstant_input(tmp_path, runner):
    write_network(tmp_path / "net.json",
                  input_kind={"kind": "sinusoid", "mean": 0.0, "amplitude": 0.5,
                              "period": 1.0})
    write_config(tmp_path / "run.json")
    res = runner.invoke(cli.main, ["stationary", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 1
    assert "non-constant input" in res.output


def test_sweep_single_point_and_artifacts(tmp_path, runner):
    write_network(tmp_path / "net.json", j=0.5, sigma=0.3, v0=0.0, f=0.0)
    write_config(tmp_path / "run.json",
                 sweep={"parameter": "g", "values": [1.0], "ic_offset": 0.1})
    res = runner.invoke(cli.main, ["sweep", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 0
    rows = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("value,mean_plus_1,mean_minus_1,c0_1")
    assert len(rows) == 2


def test_sweep_empty_grid_rejected(tmp_path, runner):
    write_network(tmp_path / "net.json")
    write_config(tmp_path / "run.json", sweep={"parameter": "g", "values": []})
    res = runner.invoke(cli.main, ["sweep", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 1


def test_sweep_emits_hopf_analysis_for_two_populations(tmp_path, runner):
    doc = {
        "populations": [
            {"tau": 1.0, "f": 0.0, "sigmoid": {"kind": "tanh", "g": 1.5},
             "input": {"kind": "constant", "value": 0.0}},
            {"tau": 1.0, "f": 0.0, "sigmoid": {"kind": "tanh", "g": 1.5},
             "input": {"kind": "constant", "value": 0.0}},
        ],
        "j_bar": [[1.0, -2.0], [2.0, 1.0]], "sigma": [[0.0, 0.0], [0.0, 0.0]],
        "initial_mean": [0.1, 0.0], "initial_variance": [0.0, 0.0],
    }
    (tmp_path / "net.json").write_text(json.dumps(doc))
    write_config(tmp_path / "run.json",
                 sweep={"parameter": "g", "values": [1.5]})
    res = runner.invoke(cli.main, ["sweep", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 0
    hopf = json.loads((tmp_path / "out" / "hopf.json").read_text())
    assert hopf["g_c"] == pytest.approx(1.0)
    assert hopf["is_feedback_loop"] is True


def test_mc_validate_zero_coupling(tmp_path, runner):
    write_network(tmp_path / "net.json", tau=0.25, f=1.0, v0=0.0, mu0=0.0, j=0.0,
                  sigma=0.0)
    write_config(tmp_path / "run.json",
                 mc={"sizes": [50], "trials": 80, "seed": 99})
    cfg = json.loads((tmp_path / "run.json").read_text())
    cfg["grid"] = {"t0": 0.0, "t_end": 1.0, "dt": 0.025}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    res = runner.invoke(cli.main, ["mc-validate", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 0
    cmp = json.loads((tmp_path / "out" / "mc_compare.json").read_text())
    assert cmp["comparison"]["max_z"] <= 4.0
    header = (tmp_path / "out" / "mc_moments.csv").read_text().splitlines()[0]
    assert header == "t,mean_1,mean_se_1,var_1,var_se_1"


def test_mc_validate_requires_mc_section(tmp_path, runner):
    write_network(tmp_path / "net.json")
    write_config(tmp_path / "run.json")
    res = runner.invoke(cli.main, ["mc-validate", "--config", str(tmp_path / "run.json")])
    assert res.exit_code == 1
    assert "mc config" in res.output


def test_cli_overrides_beat_config(tmp_path, runner):
    write_network(tmp_path / "net.json")
    write_config(tmp_path / "run.json")
    out2 = tmp_path / "other"
    res = runner.invoke(cli.main, ["solve", "--config", str(tmp_path / "run.json"),
                                   "--out", str(out2), "--dt", "0.05"])
    assert res.exit_code == 0
    report = json.loads((out2 / "report.json").read_text())
    assert report["config"]["grid"]["dt"] == 0.05


def test_selftest_passes(runner):
    res = runner.invoke(cli.main, ["selftest"])
    assert res.exit_code == 0
    assert "FAIL" not in res.output


def test_artifacts_byte_identical_across_runs(tmp_path, runner):
    write_network(tmp_path / "net.json", j=0.8, sigma=0.6, g=2.0, v0=0.2)
    for sub in ("a", "b"):
        write_config(tmp_path / f"run_{sub}.json")
        cfg = json.loads((tmp_path / f"run_{sub}.json").read_text())
        cfg["out"] = str(tmp_path / sub)
        (tmp_path / f"run_{sub}.json").write_text(json.dumps(cfg))
        res = runner.invoke(cli.main, ["solve", "--config", str(tmp_path / f"run_{sub}.json")])
        assert res.exit_code == 0
    for name in ("means.csv", "cov_1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    assert {k: v for k, v in ra.items() if k != "config"} == \
        {k: v for k, v in rb.items() if k != "config"}
