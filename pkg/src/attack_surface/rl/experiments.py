"""Experiment harnesses around the learner: budget sweeps against fixed-rate
defense, trace-driven comparisons and the aggregate-budget reallocation."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable

import numpy as np

from ..errors import ConfigError
from .envs import SyntheticSurfaceEnv, TraceReplayEnv, replay_static
from .learner import RLConfig, rollout, train
from .model import growth_exponent, synthetic_model
from .triggers import trigger_times


def queue_stats(N) -> dict:
    N = np.asarray(N, dtype=float)
    if N.size == 0:
        return {"count": 0, "mean": 0.0, "variance": 0.0, "p95": 0.0, "p99": 0.0}
    return {"count": int(N.size), "mean": float(N.mean()), "variance": float(N.var()),
            "p95": float(np.percentile(N, 95)), "p99": float(np.percentile(N, 99))}


def budget_config(base: RLConfig, b: float) -> RLConfig:
    acts = tuple(a for a in base.actions if a <= b + 1e-12)
    return replace(base, actions=acts, budget=b)


def synthetic_budget_point(b, base: RLConfig, seed=0, lam=5.0, arrivals="poisson",
                           eval_episodes=5000, exact=True) -> dict:
    """Train at per-step budget b, then compare the final policy with a fixed
    rate equal to its mean spend, on common random numbers."""
    cfg = budget_config(base, b)
    model = None
    if exact and arrivals == "poisson":
        model = synthetic_model(lam, cfg.exploit_coupling, cfg.actions, cfg.N_max, cfg.H,
                                cost_weight=cfg.cost_weight, defense_weight=cfg.defense_weight)
    env = SyntheticSurfaceEnv(lam, cfg.exploit_coupling, arrivals=arrivals, carryover=cfg.carryover,
                              rng=seed)
    learner, metrics = train(env, cfg, model=model)
    rates = learner.policy_rates()
    n_max = cfg.N_max

    def rl_policy(h, N):
        return rates[h, N if N < n_max else n_max]

    eval_seed = 10_000 + seed
    rl = rollout(SyntheticSurfaceEnv(lam, cfg.exploit_coupling, arrivals=arrivals, rng=eval_seed),
                 rl_policy, cfg.H, eval_episodes)
    spend = rl["mean_effort"]
    fixed = rollout(SyntheticSurfaceEnv(lam, cfg.exploit_coupling, arrivals=arrivals, rng=eval_seed),
                    lambda h, N: spend, cfg.H, eval_episodes)
    at_cap = rollout(SyntheticSurfaceEnv(lam, cfg.exploit_coupling, arrivals=arrivals, rng=eval_seed),
                     lambda h, N: b, cfg.H, eval_episodes)
    out = {
        "budget": b,
        "seed": seed,
        "rl_exploit_rate": rl["exploit_rate"],
        "rl_mean_effort": spend,
        "fixed_exploit_rate": fixed["exploit_rate"],
        "fixed_at_budget_exploit_rate": at_cap["exploit_rate"],
        "reduction": 1.0 - rl["exploit_rate"] / fixed["exploit_rate"] if fixed["exploit_rate"] > 0 else 0.0,
        "syncs": metrics.n_syncs,
        "trigger_count": len(trigger_times(cfg.eta, cfg.H, metrics.T)),
        "train_exploit_rate": metrics.exploit_rate(),
    }
    if model is not None:
        reg = metrics.regret
        out["v_star"] = metrics.v_star
        out["final_value"] = float(metrics.value[-1])
        out["regret"] = float(reg[-1])
        if metrics.T >= 2000:
            out["regret_exponent"] = growth_exponent(reg, t_lo=max(metrics.T // 10, 1))
    out["_metrics"] = metrics
    out["_learner"] = learner
    return out


def tune_weight(run: Callable[[float], float], target: float, lo=1e-3, hi=1e3, rel_tol=0.02,
                max_iter=40):
    """Bisection (in log space) on a weight whose effect ``run(weight)`` decreases with it.

    Returns (weight, achieved).  If the target is out of reach the closer
    bound is returned.
    """
    if target <= 0:
        raise ConfigError("target must be positive")
    f_lo, f_hi = run(lo), run(hi)
    if f_lo <= target:
        return lo, f_lo
    if f_hi >= target:
        return hi, f_hi
    best = (lo, f_lo)
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        f = run(mid)
        if abs(f - target) < abs(best[1] - target):
            best = (mid, f)
        if abs(f - target) <= rel_tol * target:
            return mid, f
        if f > target:
            lo = mid
        else:
            hi = mid
    return best


def trace_budget_point(arrivals, target_patches, b, base: RLConfig, seed=0, dt=1.0, N0=0,
                       match=True) -> dict:
    """Per-step budget b on a replayed trace, defense weight tuned so RL's patch
    count matches ``target_patches`` (within 2%)."""
    cfg = budget_config(replace(base, carryover=True), b)

    def run_once(weight):
        c = replace(cfg, defense_weight=weight)
        env = TraceReplayEnv(arrivals, dt, N0, carryover=True, rng=seed)
        return train(env, c)

    if match:
        weight, _ = tune_weight(lambda w: float(run_once(w)[1].patches.sum()), float(target_patches))
    else:
        weight = cfg.defense_weight
    learner, metrics = run_once(weight)
    stats = queue_stats(metrics.queue())
    stats.update(policy="RL", budget=b, seed=seed, defense_weight=weight,
                 patches=int(metrics.patches.sum()), target_patches=int(target_patches))
    return stats


def segment_rates(series, intervals, source="patch-rate", segments=None) -> np.ndarray:
    """Per-bin baseline defense rate from a segmentation.

    ``patch-rate``: each segment's observed patches per unit time.
    ``calibrated-b``: each segment's calibrated rate cap b (needs ``segments``).
    """
    rates = np.zeros(len(series))
    for i, (a, e) in enumerate(intervals):
        if source == "patch-rate":
            dur = (e - a + 1) * series.bin_width
            r = series.patches[a: e + 1].sum() / dur
        elif source == "calibrated-b":
            if segments is None:
                raise ConfigError("calibrated-b needs fitted segments")
            r = segments[i].b
        else:
            raise ConfigError(f"unknown baseline rate source {source!r}")
        rates[a: e + 1] = r
    return rates


def aggregate_budget(series, intervals, base: RLConfig, seed=0, source="patch-rate",
                     segments=None) -> dict:
    """Static per-segment Poisson defense vs RL constrained to the same total effort."""
    dt = series.bin_width
    arrivals = series.arrivals
    rates = segment_rates(series, intervals, source, segments)
    total = float(rates.sum() * dt)
    base_N, base_Nd = replay_static(arrivals, rates, dt, rng=seed)
    cfg = replace(base, carryover=True)

    def run_once(weight):
        c = replace(cfg, defense_weight=weight)
        env = TraceReplayEnv(arrivals, dt, carryover=True, effort_cap=total, rng=seed)
        return train(env, c)

    weight, _ = tune_weight(lambda w: float(run_once(w)[1].effort.sum()), total)
    learner, metrics = run_once(weight)
    rl_q = metrics.queue()
    return {
        "aggregate_budget": total,
        "rl_effort": float(metrics.effort.sum()),
        "defense_weight": weight,
        "baseline": queue_stats(base_N[:-1][: rl_q.size]),
        "rl": queue_stats(rl_q),
        "baseline_queue": base_N[:-1][: rl_q.size],
        "rl_queue": rl_q,
    }
