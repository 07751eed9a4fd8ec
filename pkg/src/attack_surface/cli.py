"""Command-line entry point and experiment recipes.

Every recipe writes into one output directory: data CSVs, ``summary.json``,
``manifest.json`` (config echo, seed, versions, file list, stage report) and
``timing.json``.  Timestamps and wall time only ever go to ``timing.json`` so
re-runs with the same seed leave every other file byte-identical.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata

import numpy as np
import yaml

from . import __version__
from .chain import (
    analytic_curve,
    average_curves,
    breach_and_defense_rates,
    empirical_autocovariance,
    lrd_verdict,
    stationary_distribution,
    surface_pmf,
    tail_exponent_estimate,
)
from .errors import AttackSurfaceError, ConfigError, MissingInputError
from .queue import ArrivalSource, SurfaceConfig, apply_amplification, simulate, simulate_mginf
from .rl import (
    DEFAULT_ACTIONS,
    RLConfig,
    TraceReplayEnv,
    aggregate_budget,
    policy_csv,
    queue_stats,
    synthetic_budget_point,
    train,
    tune_weight,
)
from .stochastics import distributions as D
from .stochastics.divergence import Histogram, divergence
from .stochastics.random import RandomStream
from .trace import (
    SegmentedQueueModel,
    parse_trace,
    reconstruct_queue,
    segment_qld,
    stationary_trace,
    two_regime_trace,
)
from .trace.model import fit_segment
from .trace.segmentation import empirical_qld

SUMMARY_SCHEMA = "attack-surface/summary"
SUMMARY_VERSION = 1
MANIFEST_VERSION = 1

EXPERIMENTS = ("simulate", "steady-state", "amplification", "lrd", "fit-trace", "train-rl",
               "aggregate-budget")
TOP_KEYS = {"experiment", "seed", "replications", "output", "jobs"}

# Recipe defaults.  A key set to None is optional and typed by use.
DEFAULTS = {
    "simulate": {
        "lam": 100.0, "alpha": 1.0, "beta": 0.001, "a": 1.0, "budget": None, "servers": None,
        "dt": 0.01, "horizon": 100_000, "arrivals": "poisson", "N0": 0, "burn_in": 0,
    },
    "steady-state": {
        "lam": 100.0, "beta": 0.001, "alphas": [1.0, 0.5, 0.25, 0.1], "dt": 0.01,
        "horizon": 1_000_000, "burn_in": 10_000, "tol": 1e-12, "reference": None,
    },
    "amplification": {
        "lam": 5.0, "alpha": 0.5, "beta": 0.005, "a": 4.0, "modes": ["symmetric", "attack-only"],
        "dt": 0.01, "horizon": 1_000_000, "burn_in": 10_000, "reference": None,
    },
    "lrd": {
        "lam": 10.0, "service": {"family": "pareto", "scale": 1.0, "alpha": 1.5},
        "control": True, "horizon": 1_000_000, "dt": 1.0, "max_lag": 100,
        "window": [10, 100], "steep": -2.0,
    },
    "fit-trace": {
        "trace": None, "synthetic": "two-regime", "n_bins": 10_000, "bin_width": 1.0,
        "k_max": 10, "sim_budget": 10_000, "candidates": None, "l_min_frac": 0.02,
        "merge_distance": 1.0, "validate": True,
    },
    "train-rl": {
        "env": "synthetic", "budgets": [3.0], "episodes": 10_000, "horizon": 10,
        "actions": list(DEFAULT_ACTIONS), "c_bonus": 0.1, "w": 0.1, "eta": None,
        "N_max": None, "cost_weight": None, "defense_weight": 1.0, "switching_mode": "visited",
        "lam": 5.0, "kappa": 3.0, "arrivals": "poisson", "eval_episodes": 5000, "exact": True,
        "trace": None, "synthetic": "two-regime", "n_bins": 10_000, "bin_width": 1.0,
        "match_patches": True,
    },
    "aggregate-budget": {
        "trace": None, "synthetic": "two-regime", "n_bins": 10_000, "bin_width": 1.0,
        "k_max": 10, "rate_source": "patch-rate", "sim_budget": 10_000, "horizon": 10,
        "actions": list(DEFAULT_ACTIONS), "c_bonus": 0.1, "w": 0.1, "N_max": 300,
        "cost_weight": 1.0,
    },
}

# per-environment defaults for train-rl keys left at None
RL_ENV_DEFAULTS = {
    "synthetic": {"N_max": 30, "cost_weight": 4.0},
    "trace": {"N_max": 300, "cost_weight": 1.0},
}


# -- configuration ----------------------------------------------------------------

def _check_type(key, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(default, float):
            return float(value)
        if not float(value).is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def build_config(raw: dict) -> dict:
    """Validate a raw config tree and fill defaults.  Unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    allowed = TOP_KEYS | {exp}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    block = raw.get(exp) or {}
    if not isinstance(block, dict):
        raise ConfigError(f"section {exp!r} must be a mapping")
    defaults = DEFAULTS[exp]
    bad = sorted(set(block) - set(defaults))
    if bad:
        raise ConfigError(f"unknown keys in {exp!r}: {bad}")
    params = dict(defaults)
    for k, v in block.items():
        params[k] = _check_type(f"{exp}.{k}", defaults[k], v)
    seed = raw.get("seed", 0)
    reps = raw.get("replications", 1)
    jobs = raw.get("jobs", 1)
    for name, v in (("seed", seed), ("replications", reps), ("jobs", jobs)):
        if isinstance(v, bool) or not isinstance(v, int) or v < (0 if name == "seed" else 1):
            raise ConfigError(f"{name} must be an integer >= {0 if name == 'seed' else 1}")
    out = raw.get("output") or os.path.join("runs", exp)
    cfg = {"experiment": exp, "seed": seed, "replications": reps, "jobs": jobs,
           "output": str(out), exp: params}
    if "burn_in" in params and params["burn_in"] >= max(params["horizon"], 1) and params["horizon"] > 0:
        raise ConfigError(f"{exp}.burn_in must be smaller than the horizon")
    for key in ("trace",):
        path = params.get(key)
        if path is not None and not os.path.isfile(path):
            raise MissingInputError(f"input file not found: {path}")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise MissingInputError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return build_config(raw or {})


# -- output plumbing --------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def emit_summary(recipe: str, metrics: dict = None, series: dict = None) -> dict:
    """Versioned machine-readable summary.

    ``series`` maps names to 1-d arrays, each summarized by count, mean,
    variance and the 95th/99th percentiles (all zero with count 0 when empty).
    ``metrics`` holds anything else (divergences, regret exponents, ...).
    """
    out = {"schema": SUMMARY_SCHEMA, "version": SUMMARY_VERSION, "recipe": recipe,
           "series": {}, "metrics": _plain(metrics or {})}
    for name, values in (series or {}).items():
        out["series"][name] = queue_stats(values)
    return out


class Run:
    """One recipe execution: owns the output directory and the manifest."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = cfg["output"]
        self.files = []
        self.stages = []
        self.first_error = None
        os.makedirs(self.out, exist_ok=True)
        self.t0 = time.time()

    def write(self, name: str, text: str):
        path = os.path.join(self.out, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        if name not in self.files:
            self.files.append(name)
        return path

    def write_json(self, name, obj):
        return self.write(name, _dumps(obj))

    @contextlib.contextmanager
    def stage(self, name, fatal=True):
        """Record a stage.  Non-fatal failures are logged and the recipe goes on."""
        entry = {"stage": name, "status": "ok"}
        self.stages.append(entry)
        try:
            yield
        except AttackSurfaceError as exc:
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            if self.first_error is None:
                self.first_error = exc
            print(f"[{name}] {type(exc).__name__}: {exc}", file=sys.stderr)
            if fatal:
                raise

    def finish(self):
        self.write_json("timing.json", {"wall_time_s": round(time.time() - self.t0, 3),
                                        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ",
                                                                 time.gmtime(self.t0))})
        files = []
        for name in self.files:
            with open(os.path.join(self.out, name), "rb") as fh:
                files.append({"file": name, "sha256": hashlib.sha256(fh.read()).hexdigest()})
        manifest = {
            "version": MANIFEST_VERSION,
            "experiment": self.cfg["experiment"],
            "seed": self.cfg["seed"],
            "config": self.cfg,
            "versions": versions(),
            "outputs": files,
            "stages": self.stages,
            "status": "ok" if self.first_error is None else "failed",
        }
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            fh.write(_dumps(manifest))


def versions():
    out = {"attack_surface": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "scikit-learn", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def fan_out(fn, args, jobs=1):
    """Map ``fn`` over ``args`` in order; worker processes when jobs > 1."""
    args = list(args)
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as ex:
        return list(ex.map(fn, args))


def _label(x) -> str:
    return format(float(x), "g")


# -- recipes: queue model -----------------------------------------------------------

def _sim_replicate(args):
    cfg_dict, horizon, burn_in, N0, arrivals, seed, label, i = args
    cfg = SurfaceConfig.from_dict(cfg_dict)
    src = ArrivalSource.adversarial() if arrivals == "adversarial" else ArrivalSource.poisson()
    tr = simulate(cfg, horizon, src, rng=RandomStream(seed).child(label).replicate(i), N0=N0)
    tr.check()
    occ = tr.occupancy(burn_in)
    r = tr.rates(burn_in)
    return {"occupancy": occ, "rates": r, "mean": float(tr.N[burn_in:-1].mean())}


def _pool_sims(sims):
    """Average occupancy and rates over replications."""
    size = max(s["occupancy"].size for s in sims)
    occ = np.mean([np.pad(s["occupancy"], (0, size - s["occupancy"].size)) for s in sims], axis=0)
    rates = {k: float(np.mean([s["rates"][k] for s in sims])) for k in sims[0]["rates"]}
    return occ, rates, float(np.mean([s["mean"] for s in sims]))


def _tv(pmf_probs, occ):
    return divergence(Histogram.from_pmf(pmf_probs), Histogram.from_pmf(occ), "TVD")


def recipe_simulate(run: Run):
    p = run.cfg["simulate"]
    budget = math.inf if p["budget"] is None else p["budget"]
    cfg = SurfaceConfig(lam=p["lam"], alpha=p["alpha"], beta=p["beta"], a=p["a"], budget=budget,
                        servers=p["servers"], dt=p["dt"])
    src = ArrivalSource.adversarial() if p["arrivals"] == "adversarial" else ArrivalSource.poisson()
    root = RandomStream(run.cfg["seed"])
    metrics, series = {}, {}
    for i in range(run.cfg["replications"]):
        with run.stage(f"replication {i}"):
            tr = simulate(cfg, p["horizon"], src, rng=root.replicate(i), N0=p["N0"])
            tr.check()
            run.write(f"trajectory_r{i}.csv", tr.to_csv())
            metrics[f"r{i}"] = tr.rates(p["burn_in"])
            series[f"N_r{i}"] = tr.N[p["burn_in"]:-1]
    run.write_json("summary.json", emit_summary("simulate", metrics, series))


def recipe_steady_state(run: Run):
    p = run.cfg["steady-state"]
    seed, reps = run.cfg["seed"], run.cfg["replications"]
    lam, beta = p["lam"], p["beta"]
    rows, metrics = [], {}
    for alpha in p["alphas"]:
        key = _label(alpha)
        with run.stage(f"alpha={key}", fatal=False):
            mu_d = alpha * lam
            pmf = stationary_distribution(lam, mu_d, beta, tol=p["tol"])
            breach, defense = breach_and_defense_rates(pmf, lam, mu_d, beta)
            run.write(f"pmf_alpha_{key}.csv", pmf.to_csv())
            row = {"alpha": alpha, "mean": pmf.mean(), "variance": pmf.variance(),
                   "p95": pmf.quantile(0.95), "p99": pmf.quantile(0.99),
                   "breach_rate": breach, "defense_rate": defense}
            if p["reference"]:
                row["mean_pct"] = 100.0 * pmf.mean() / p["reference"]
            if p["horizon"] > 0:
                cfg = SurfaceConfig(lam=lam, alpha=alpha, beta=beta, dt=p["dt"])
                sims = fan_out(_sim_replicate, [
                    (cfg.to_dict(), p["horizon"], p["burn_in"], 0, "poisson", seed, f"alpha={key}", i)
                    for i in range(reps)], run.cfg["jobs"])
                occ, rates, mean = _pool_sims(sims)
                run.write(f"occupancy_alpha_{key}.csv", rows_csv(
                    ["N", "fraction"], [(n, f) for n, f in enumerate(occ)]))
                row.update(sim_mean=mean, sim_breach_rate=rates["breach"],
                           sim_defense_rate=rates["defense"],
                           sim_throughput=rates["breach"] + rates["defense"],
                           tv=_tv(pmf.probs, occ))
            rows.append(row)
            metrics[f"alpha={key}"] = row
    if rows:
        header = list(rows[0])
        run.write("steady_state.csv", rows_csv(header, [[r.get(h, "") for h in header] for r in rows]))
    run.write_json("summary.json", emit_summary("steady-state", metrics))


def amplification_cases(lam, alpha, beta, a, modes):
    base = SurfaceConfig(lam=lam, alpha=alpha, beta=beta)
    cases = [("base", base)]
    for mode in modes:
        cases.append((mode, apply_amplification(base, a, mode)))
    return cases


def recipe_amplification(run: Run):
    p = run.cfg["amplification"]
    seed, reps = run.cfg["seed"], run.cfg["replications"]
    rows, metrics = [], {}
    base_exploit = None
    pmfs = {}
    for name, cfg in amplification_cases(p["lam"], p["alpha"], p["beta"], p["a"], p["modes"]):
        with run.stage(name):
            pmf = surface_pmf(cfg)
            mu_d = min(cfg.static_defense_rate, cfg.budget)
            breach, defense = breach_and_defense_rates(pmf, cfg.lam, mu_d, cfg.kappa, 1.0)
            base_exploit = breach if base_exploit is None else base_exploit
            pmfs[name] = pmf.probs
            run.write(f"pmf_{name}.csv", pmf.to_csv())
            row = {"case": name, "lam": cfg.lam, "defense_rate": mu_d, "kappa": cfg.kappa,
                   "mean": pmf.mean(), "variance": pmf.variance(), "exploit_rate": breach,
                   "defense_throughput": defense,
                   "exploit_ratio": breach / base_exploit if base_exploit > 0 else float("nan")}
            if name != "base":
                row["tv_vs_base"] = _tv(pmfs["base"], pmf.probs)
            if p["reference"]:
                row["mean_pct"] = 100.0 * pmf.mean() / p["reference"]
            if p["horizon"] > 0:
                sim_cfg = replace(cfg, dt=p["dt"])
                sims = fan_out(_sim_replicate, [
                    (sim_cfg.to_dict(), p["horizon"], p["burn_in"], 0, "poisson", seed, name, i)
                    for i in range(reps)], run.cfg["jobs"])
                occ, rates, mean = _pool_sims(sims)
                row.update(sim_mean=mean, sim_exploit_rate=rates["breach"], tv=_tv(pmf.probs, occ))
            rows.append(row)
            metrics[name] = row
    header = []
    for r in rows:
        header += [k for k in r if k not in header]
    run.write("amplification.csv", rows_csv(header, [[r.get(h, "") for h in header] for r in rows]))
    run.write_json("summary.json", emit_summary("amplification", metrics))


def _mginf_replicate(args):
    lam, service, horizon, dt, max_lag, seed, label, i = args
    spec = D.DistributionSpec.from_dict(service)
    occ = simulate_mginf(lam, spec, horizon, dt, rng=RandomStream(seed).child(label).replicate(i))
    return empirical_autocovariance(occ, max_lag)


def exponential_control(service: D.DistributionSpec) -> D.DistributionSpec:
    """Exponential service with the same mean."""
    return D.exponential(1.0 / D.mean(service))


def lrd_curves(lam, service, horizon, dt, max_lag, reps, seed, label, jobs=1):
    emp = average_curves(fan_out(_mginf_replicate, [
        (lam, service.to_dict(), horizon, dt, max_lag, seed, label, i) for i in range(reps)], jobs))
    ana = analytic_curve(lam, service, emp.lags * dt)
    return ana, emp


def recipe_lrd(run: Run):
    p = run.cfg["lrd"]
    seed, reps, jobs = run.cfg["seed"], run.cfg["replications"], run.cfg["jobs"]
    window = tuple(p["window"])
    service = D.DistributionSpec.from_dict(p["service"])
    metrics = {"service": service.to_dict(), "lrd_law": service.lrd}
    cases = [("service", service)]
    if p["control"]:
        cases.append(("control", exponential_control(service)))
    for name, spec in cases:
        with run.stage(name):
            ana, emp = lrd_curves(p["lam"], spec, p["horizon"], p["dt"], p["max_lag"], reps, seed,
                                  name, jobs)
            run.write(f"{name}_analytic.csv", ana.to_csv())
            run.write(f"{name}_empirical.csv", emp.to_csv())
            # relative error only where the analytic covariance is resolvable
            lag = (emp.lags >= 1) & (ana.values > 1e-6 * ana.values[0])
            rel = np.abs(emp.values[lag] - ana.values[lag]) / ana.values[lag]
            verdict = lrd_verdict(emp, window, p["steep"])
            metrics[name] = {
                "family": spec.family,
                "analytic_slope": tail_exponent_estimate(ana, window),
                "empirical_slope": verdict["slope"],
                "empirical_end_local_slope": verdict["end_local_slope"],
                "lrd": verdict["lrd"],
                "max_rel_error": float(rel.max()) if rel.size else None,
                "rel_error_lags": int(lag.sum()),
                "analytic_end_local_slope": lrd_verdict(ana, window, p["steep"])["end_local_slope"],
            }
    run.write_json("summary.json", emit_summary("lrd", metrics))


# -- recipes: traces ------------------------------------------------------------------

def load_series(p, seed):
    """(events or None, QueueSeries) from a trace file or a synthetic generator."""
    if p["trace"] is not None:
        events = parse_trace(p["trace"])
        return events, reconstruct_queue(events, p["bin_width"])
    kind = p["synthetic"]
    if kind == "two-regime":
        tr = two_regime_trace(p["n_bins"], p["bin_width"], rng=seed)
    elif kind == "stationary":
        tr = stationary_trace(p["n_bins"], p["bin_width"], rng=seed)
    else:
        raise ConfigError(f"unknown synthetic trace {kind!r}")
    return tr.events, reconstruct_queue(tr.events, p["bin_width"], t0=0.0, n_bins=p["n_bins"])


def _candidates(p):
    from .stochastics.fitting import DEFAULT_CANDIDATES
    return DEFAULT_CANDIDATES if p["candidates"] is None else p["candidates"]


def qld_csv(series, intervals) -> str:
    N = np.asarray(series.N, dtype=np.int64)
    size = int(N.max()) + 1 if N.size else 1
    cols = [empirical_qld(N[a: b + 1], size) for a, b in intervals]
    total = empirical_qld(N, size)
    header = ["N"] + [f"segment_{i}" for i in range(len(cols))] + ["all"]
    return rows_csv(header, [[n] + [c[n] for c in cols] + [total[n]] for n in range(size)])


def recipe_fit_trace(run: Run):
    p = run.cfg["fit-trace"]
    seed = run.cfg["seed"]
    with run.stage("load"):
        events, series = load_series(p, seed)
        run.write("queue.csv", series.to_csv())
    with run.stage("fit"):
        est = SegmentedQueueModel(p["bin_width"], p["k_max"], _candidates(p), p["sim_budget"],
                                  p["l_min_frac"], p["merge_distance"], p["validate"], seed)
        est.fit(series)
        fit = est.fit_
    run.write("elbow.csv", fit.elbow_csv())
    run.write("qld.csv", qld_csv(series, [s.interval for s in fit.segments]))
    rep = fit.report()
    run.write_json("segments.json", rep)
    metrics = {k: rep[k] for k in ("K", "k_elbow", "model_kl", "bootstrap_kl")}
    metrics["intervals"] = [s.interval for s in fit.segments]
    metrics["families"] = [{"IA": s.ia.family, "ST": s.st.family} for s in fit.segments]
    run.write_json("summary.json", emit_summary("fit-trace", metrics, {"N": series.N}))


def _rl_config(p, budget=None) -> RLConfig:
    env_def = RL_ENV_DEFAULTS[p["env"]]
    n_max = p["N_max"] if p["N_max"] is not None else env_def["N_max"]
    cw = p["cost_weight"] if p["cost_weight"] is not None else env_def["cost_weight"]
    acts = tuple(a for a in p["actions"] if budget is None or a <= budget + 1e-12)
    return RLConfig(H=p["horizon"], T=p["episodes"], actions=acts, budget=budget, N_max=n_max,
                    eta=p["eta"], c_bonus=p["c_bonus"], w=p["w"], cost_weight=cw,
                    defense_weight=p["defense_weight"], switching_mode=p["switching_mode"],
                    exploit_coupling=p["kappa"], carryover=p["env"] == "trace")


def _synthetic_point(args):
    b, cfg_dict, seed, lam, arrivals, eval_episodes, exact = args
    base = RLConfig.from_dict(cfg_dict)
    res = synthetic_budget_point(b, base, seed, lam, arrivals, eval_episodes, exact)
    metrics, learner = res.pop("_metrics"), res.pop("_learner")
    return res, metrics.to_csv(), policy_csv(learner)


SWEEP_FIELDS = ("budget", "seed", "rl_exploit_rate", "rl_mean_effort", "fixed_exploit_rate",
                "fixed_at_budget_exploit_rate", "reduction", "syncs", "trigger_count",
                "v_star", "final_value", "regret", "regret_exponent")


def recipe_train_rl(run: Run):
    p = run.cfg["train-rl"]
    if p["env"] not in RL_ENV_DEFAULTS:
        raise ConfigError(f"env must be one of {sorted(RL_ENV_DEFAULTS)}")
    if not p["budgets"]:
        raise ConfigError("budgets is empty")
    if p["env"] == "synthetic":
        _train_synthetic(run, p)
    else:
        _train_trace(run, p)


def _train_synthetic(run, p):
    seed, reps = run.cfg["seed"], run.cfg["replications"]
    base = _rl_config(p)
    jobs = [(float(b), base.to_dict(), seed + i, p["lam"], p["arrivals"], p["eval_episodes"],
             p["exact"]) for b in p["budgets"] for i in range(reps)]
    rows = []
    with run.stage("sweep"):
        results = fan_out(_synthetic_point, jobs, run.cfg["jobs"])
    for (b, _, s, *_), (res, ep_csv, pol_csv) in zip(jobs, results):
        tag = f"b{_label(b)}_s{s}"
        run.write(f"episodes_{tag}.csv", ep_csv)
        run.write(f"policy_{tag}.csv", pol_csv)
        rows.append(res)
    run.write("sweep.csv", rows_csv(SWEEP_FIELDS, [[r.get(k, "") for k in SWEEP_FIELDS] for r in rows]))
    metrics = {"points": rows}
    for b in p["budgets"]:
        red = [r["reduction"] for r in rows if r["budget"] == b]
        metrics[f"mean_reduction_b{_label(b)}"] = float(np.mean(red))
    run.write_json("summary.json", emit_summary("train-rl", metrics))


def _initial_open(series):
    if len(series) == 0:
        return 0
    return int(series.N[0] - series.arrivals[0] + series.patches[0])


def _train_trace(run, p):
    seed = run.cfg["seed"]
    with run.stage("load"):
        _, series = load_series(p, seed)
    arrivals, dt = series.arrivals, series.bin_width
    N0 = _initial_open(series)
    target = float(series.patches.sum())
    table = [["baseline", "", *_table_stats(series.N), int(series.patches.sum()), ""]]
    series_out = {"baseline": series.N}
    for b in p["budgets"]:
        with run.stage(f"budget={_label(b)}", fatal=False):
            cfg = _rl_config(p, float(b))

            def run_once(weight, cfg=cfg):
                env = TraceReplayEnv(arrivals, dt, N0, carryover=True, rng=seed)
                return train(env, replace(cfg, defense_weight=weight))

            if p["match_patches"]:
                weight, _ = tune_weight(lambda w: float(run_once(w)[1].patches.sum()), target)
            else:
                weight = cfg.defense_weight
            learner, metrics = run_once(weight)
            q = metrics.queue()
            tag = f"b{_label(b)}"
            run.write(f"episodes_{tag}.csv", metrics.to_csv())
            run.write(f"policy_{tag}.csv", policy_csv(learner))
            table.append(["RL", float(b), *_table_stats(q), int(metrics.patches.sum()), weight])
            series_out[f"RL_{tag}"] = q
    run.write("table.csv", rows_csv(["policy", "budget", "mean", "variance", "p95", "p99",
                                     "patches", "defense_weight"], table))
    run.write_json("summary.json", emit_summary("train-rl", {"target_patches": target}, series_out))


def _table_stats(N):
    s = queue_stats(N)
    return s["mean"], s["variance"], s["p95"], s["p99"]


def histogram_csv(a, b) -> str:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    size = int(max(a.max(initial=0), b.max(initial=0))) + 1
    ca = np.bincount(a, minlength=size)
    cb = np.bincount(b, minlength=size)
    return rows_csv(["N", "baseline", "rl"], [(n, ca[n], cb[n]) for n in range(size)])


def recipe_aggregate_budget(run: Run):
    p = run.cfg["aggregate-budget"]
    seed = run.cfg["seed"]
    with run.stage("load"):
        _, series = load_series(p, seed)
    with run.stage("segment"):
        seg = segment_qld(series, range(1, p["k_max"] + 1), random_state=seed)
        segments = None
        if p["rate_source"] == "calibrated-b":
            root = RandomStream(seed)
            segments = [fit_segment(series, iv, sim_budget=p["sim_budget"], rng=root.child(i),
                                    random_state=seed) for i, iv in enumerate(seg.intervals)]
    with run.stage("compare"):
        base = RLConfig(H=p["horizon"], T=max(len(series) // p["horizon"], 1),
                        actions=tuple(p["actions"]), N_max=p["N_max"], c_bonus=p["c_bonus"],
                        w=p["w"], cost_weight=p["cost_weight"])
        res = aggregate_budget(series, seg.intervals, base, seed, p["rate_source"], segments)
    bq, rq = res["baseline_queue"], res["rl_queue"]
    run.write("queues.csv", rows_csv(["step", "baseline", "rl"],
                                     [(k, bq[k], rq[k]) for k in range(rq.size)]))
    run.write("histogram.csv", histogram_csv(bq, rq))
    run.write("segments.csv", rows_csv(["segment", "start", "end"],
                                       [(i, a, e) for i, (a, e) in enumerate(seg.intervals)]))
    metrics = {k: res[k] for k in ("aggregate_budget", "rl_effort", "defense_weight")}
    metrics["mean_ratio"] = res["rl"]["mean"] / res["baseline"]["mean"] if res["baseline"]["mean"] else None
    metrics["rate_source"] = p["rate_source"]
    run.write_json("summary.json", emit_summary("aggregate-budget", metrics,
                                                {"baseline": bq, "rl": rq}))


RECIPES = {
    "simulate": recipe_simulate,
    "steady-state": recipe_steady_state,
    "amplification": recipe_amplification,
    "lrd": recipe_lrd,
    "fit-trace": recipe_fit_trace,
    "train-rl": recipe_train_rl,
    "aggregate-budget": recipe_aggregate_budget,
}


def execute(cfg: dict) -> Run:
    """Run a validated config.  Raises the first stage error after writing the manifest."""
    run = Run(cfg)
    try:
        RECIPES[cfg["experiment"]](run)
    except AttackSurfaceError as exc:
        if run.first_error is None:
            run.first_error = exc
            run.stages.append({"stage": "recipe", "status": "failed",
                               "error": f"{type(exc).__name__}: {exc}"})
    finally:
        run.finish()
    if run.first_error is not None:
        raise run.first_error
    return run


# -- argument parsing -------------------------------------------------------------------

def _service_arg(text):
    """``pareto:scale=1,alpha=1.5`` -> distribution block."""
    fam, _, rest = text.partition(":")
    block = {"family": fam}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        try:
            block[k.strip()] = float(v)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad parameter {item!r}") from None
    return block


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--replications", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None, help="worker processes for replications")

    ap = argparse.ArgumentParser(prog="attack-surface", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate the slot-level surface queue")
    s.add_argument("--lam", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--a", type=float)
    s.add_argument("--budget", type=float)
    s.add_argument("--servers", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--horizon", type=int)
    s.add_argument("--arrivals", choices=["poisson", "adversarial"])
    s.add_argument("--burn-in", dest="burn_in", type=int)

    s = sub.add_parser("steady-state", parents=[common], help="stationary law vs simulation")
    s.add_argument("--lam", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--alphas", type=_floats)
    s.add_argument("--dt", type=float)
    s.add_argument("--horizon", type=int, help="slots per replication; 0 skips simulation")
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.add_argument("--reference", type=float, help="normalize E[N] by this value (percent)")

    s = sub.add_parser("amplification", parents=[common], help="automation scaling cases")
    s.add_argument("--lam", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--a", type=float)
    s.add_argument("--horizon", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=int)

    s = sub.add_parser("lrd", parents=[common], help="M/G/inf autocovariance study")
    s.add_argument("--lam", type=float)
    s.add_argument("--service", type=_service_arg, help="e.g. pareto:scale=1,alpha=1.5")
    s.add_argument("--horizon", type=int)
    s.add_argument("--max-lag", dest="max_lag", type=int)

    s = sub.add_parser("fit-trace", parents=[common], help="segment and fit a vulnerability trace")
    s.add_argument("trace", nargs="?", help="trace CSV (default: synthetic two-regime trace)")
    s.add_argument("--bin-width", dest="bin_width", type=float)
    s.add_argument("--k-max", dest="k_max", type=int)
    s.add_argument("--sim-budget", dest="sim_budget", type=int)
    s.add_argument("--n-bins", dest="n_bins", type=int)

    s = sub.add_parser("train-rl", parents=[common], help="train the low-switching defense learner")
    s.add_argument("--env", choices=["synthetic", "trace"])
    s.add_argument("--trace")
    s.add_argument("--budget", dest="budgets", type=_floats, help="one or more comma-separated budgets")
    s.add_argument("--episodes", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--c-bonus", dest="c_bonus", type=float)
    s.add_argument("--w", type=float)
    s.add_argument("--arrivals", choices=["poisson", "adversarial"])
    s.add_argument("--bin-width", dest="bin_width", type=float)
    s.add_argument("--n-bins", dest="n_bins", type=int, help="length of the synthetic trace")

    s = sub.add_parser("aggregate-budget", parents=[common],
                       help="static per-segment defense vs RL under the same total effort")
    s.add_argument("trace", nargs="?")
    s.add_argument("--bin-width", dest="bin_width", type=float)
    s.add_argument("--rate-source", dest="rate_source", choices=["patch-rate", "calibrated-b"])
    s.add_argument("--n-bins", dest="n_bins", type=int)

    s = sub.add_parser("run", parents=[common], help="run a YAML experiment config")
    s.add_argument("config")
    return ap


_COMMON = ("seed", "out", "replications", "jobs", "command", "config")


def config_from_args(args) -> dict:
    if args.command == "run":
        if not os.path.isfile(args.config):
            raise MissingInputError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
    else:
        raw = {"experiment": args.command}
        block = {k: v for k, v in vars(args).items() if k not in _COMMON and v is not None}
        raw[args.command] = block
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output"] = args.out
    if args.replications is not None:
        raw["replications"] = args.replications
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    return build_config(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        run = execute(cfg)
    except yaml.YAMLError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AttackSurfaceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (2, 3, 4) else 1
    print(os.path.join(run.out, "manifest.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
