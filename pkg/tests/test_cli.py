import json
import os

import numpy as np
import pytest
import yaml

from attack_surface.cli import build_config, emit_summary, execute, main
from attack_surface.errors import ConfigError, MissingInputError


def _files(d):
    return sorted(f for f in os.listdir(d) if f not in ("timing.json", "manifest.json"))


def _run(tmp_path, name, argv):
    out = tmp_path / name
    assert main(argv + ["--out", str(out)]) == 0
    return out


# -- config ------------------------------------------------------------------------

def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        build_config({"experiment": "lrd", "lrd": {"lamda": 3}})
    with pytest.raises(ConfigError):
        build_config({"experiment": "lrd", "sed": 3})
    with pytest.raises(ConfigError):
        build_config({"experiment": "nope"})


def test_burn_in_must_fit():
    with pytest.raises(ConfigError):
        build_config({"experiment": "steady-state", "steady-state": {"horizon": 100, "burn_in": 100}})


def test_type_checks():
    with pytest.raises(ConfigError):
        build_config({"experiment": "lrd", "lrd": {"horizon": 1.5}})
    with pytest.raises(ConfigError):
        build_config({"experiment": "lrd", "lrd": {"control": "yes"}})
    with pytest.raises(ConfigError):
        build_config({"experiment": "lrd", "replications": 0})
    cfg = build_config({"experiment": "lrd", "lrd": {"lam": 3}})
    assert cfg["lrd"]["lam"] == 3.0 and cfg["seed"] == 0


def test_missing_trace_file(tmp_path):
    with pytest.raises(MissingInputError):
        build_config({"experiment": "fit-trace", "fit-trace": {"trace": str(tmp_path / "x.csv")}})


# -- summary --------------------------------------------------------------------------

def test_summary_empty_series():
    s = emit_summary("simulate", series={"N": np.array([])})
    assert s["series"]["N"] == {"count": 0, "mean": 0.0, "variance": 0.0, "p95": 0.0, "p99": 0.0}
    assert s["version"] == 1 and s["schema"] == "attack-surface/summary"


def test_summary_constant_series():
    s = emit_summary("simulate", series={"N": np.full(50, 7)})["series"]["N"]
    assert s["p95"] == 7 and s["p99"] == 7 and s["variance"] == 0


# -- exit codes -------------------------------------------------------------------------

def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: lrd\nlrd:\n  horizn: 5\n")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "none.yaml")]) == 3
    broken = tmp_path / "broken.csv"
    broken.write_text("id,discovered_at,patched_at\na,xx,1\n")
    assert main(["fit-trace", str(broken), "--out", str(tmp_path / "o")]) == 3
    unstable = tmp_path / "u.yaml"
    unstable.write_text(yaml.safe_dump({
        "experiment": "steady-state", "output": str(tmp_path / "u"),
        "steady-state": {"beta": 0.0, "alphas": [2.0, 0.5], "horizon": 0}}))
    assert main(["run", str(unstable)]) == 4
    man = json.loads((tmp_path / "u" / "manifest.json").read_text())
    assert [s["status"] for s in man["stages"]] == ["ok", "failed"]
    assert man["status"] == "failed"
    # the stage that succeeded still produced its output
    assert (tmp_path / "u" / "pmf_alpha_2.csv").exists()


# -- recipes ------------------------------------------------------------------------------

def test_manifest_lists_every_output(tmp_path):
    out = _run(tmp_path, "ss", ["steady-state", "--horizon", "5000", "--burn-in", "500",
                                "--alphas", "1,0.5"])
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["file"] for f in man["outputs"]}
    assert listed == set(os.listdir(out)) - {"manifest.json"}
    assert man["seed"] == 0 and man["config"]["steady-state"]["horizon"] == 5000
    assert "numpy" in man["versions"]


def test_steady_state_csv(tmp_path):
    out = _run(tmp_path, "ss", ["steady-state", "--horizon", "0"])
    rows = (out / "steady_state.csv").read_text().splitlines()
    assert rows[0].startswith("alpha,mean,variance,p95,p99,breach_rate,defense_rate")
    assert len(rows) == 5
    for line in rows[1:]:
        vals = [float(x) for x in line.split(",")]
        assert vals[5] + vals[6] == pytest.approx(100.0)


def test_amplification_recipe(tmp_path):
    out = _run(tmp_path, "amp", ["amplification", "--horizon", "0"])
    s = json.loads((out / "summary.json").read_text())["metrics"]
    assert s["symmetric"]["exploit_ratio"] == pytest.approx(4.0)
    assert s["symmetric"]["tv_vs_base"] < 1e-9
    assert s["attack-only"]["exploit_ratio"] > 4.0


def test_lrd_recipe(tmp_path):
    out = _run(tmp_path, "lrd", ["lrd", "--horizon", "20000", "--replications", "2"])
    s = json.loads((out / "summary.json").read_text())["metrics"]
    assert s["service"]["analytic_slope"] == pytest.approx(-0.5, abs=0.02)
    assert s["control"]["analytic_end_local_slope"] < -2
    for f in ("service_analytic.csv", "service_empirical.csv", "control_analytic.csv"):
        assert (out / f).exists()


def test_run_config_equals_subcommand(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": "train-rl", "seed": 2,
                                   "output": str(tmp_path / "a"),
                                   "train-rl": {"episodes": 100, "budgets": [1.0],
                                                "eval_episodes": 100}}))
    assert main(["run", str(cfg)]) == 0
    # the same tree built in Python instead of read from YAML
    cfg2 = build_config({"experiment": "train-rl", "seed": 2, "output": str(tmp_path / "b"),
                         "train-rl": {"episodes": 100, "budgets": [1.0], "eval_episodes": 100}})
    execute(cfg2)
    for f in _files(tmp_path / "a"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_rl_synthetic_outputs(tmp_path):
    out = _run(tmp_path, "rl", ["train-rl", "--episodes", "200", "--budget", "1,2", "--seed", "3"])
    sweep = (out / "sweep.csv").read_text().splitlines()
    assert len(sweep) == 3
    head = (out / "episodes_b1_s3.csv").read_text().splitlines()
    assert head[0] == "episode,cost,switch_cost,cumulative_regret,sync"
    assert len(head) == 201


def test_trace_recipes(tmp_path):
    out = _run(tmp_path, "t", ["train-rl", "--env", "trace", "--n-bins", "600", "--budget", "2"])
    table = (out / "table.csv").read_text().splitlines()
    assert table[0] == "policy,budget,mean,variance,p95,p99,patches,defense_weight"
    assert table[1].startswith("baseline") and table[2].startswith("RL")
    out = _run(tmp_path, "g", ["aggregate-budget", "--n-bins", "600"])
    s = json.loads((out / "summary.json").read_text())
    assert s["series"]["baseline"]["count"] == s["series"]["rl"]["count"] == 600
    assert (out / "histogram.csv").read_text().startswith("N,baseline,rl")


def test_fit_trace_from_file(tmp_path):
    from attack_surface.trace import two_regime_trace, write_trace

    tr = two_regime_trace(1200, rng=5)
    path = tmp_path / "trace.csv"
    write_trace(tr.events, path)
    out = _run(tmp_path, "f", ["fit-trace", str(path), "--sim-budget", "500", "--k-max", "4"])
    rep = json.loads((out / "segments.json").read_text())
    assert rep["K"] >= 1 and len(rep["segments"]) == rep["K"]
    table = rep["segments"][0]["divergence_IA"]
    assert all(set(row) >= {"KL", "TVD", "L2", "JSD", "W1"} for row in table.values())
    assert (out / "elbow.csv").read_text().startswith("K,kl")


@pytest.mark.parametrize("argv", [
    ["simulate", "--horizon", "3000", "--replications", "2"],
    ["steady-state", "--horizon", "3000", "--burn-in", "300", "--alphas", "1"],
    ["amplification", "--horizon", "3000", "--burn-in", "300"],
    ["lrd", "--horizon", "5000"],
    ["fit-trace", "--n-bins", "800", "--sim-budget", "500", "--k-max", "3"],
    ["train-rl", "--episodes", "150", "--budget", "1.5"],
    ["aggregate-budget", "--n-bins", "500"],
])
def test_rerun_is_byte_identical(tmp_path, argv):
    a = _run(tmp_path, "a", argv)
    b = _run(tmp_path, "b", argv)
    assert _files(a) == _files(b)
    for f in _files(a):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_parallel_replications_match_serial(tmp_path):
    argv = ["steady-state", "--horizon", "3000", "--burn-in", "300", "--alphas", "1",
            "--replications", "2"]
    a = _run(tmp_path, "a", argv)
    b = _run(tmp_path, "b", argv + ["--jobs", "2"])
    for f in _files(a):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
