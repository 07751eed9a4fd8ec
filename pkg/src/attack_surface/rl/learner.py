"""Optimistic tabular Q-learning with delayed policy switching.

Two tables are kept per (step h, state N, action): the estimate table is
updated after every transition, the belief table drives actions and is
refreshed from the estimate only on trigger episodes.  Values are stored in
normalized *reward* form, r = (C_bar + w_d b - C(N) - w_d a) / (C_bar + w_d b)
in [0, 1], so larger is better: actions are the argmax of the belief table
(ties to the smallest rate) and initialising every entry at H is optimistic.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import ConfigError, ConstraintError, ParameterDomainError
from .model import TabularModel, evaluate_policy, oracle_optimal, regret_series
from .triggers import default_eta, trigger_times

DEFAULT_ACTIONS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
SWITCH_MODES = ("visited", "full")


@dataclass(frozen=True)
class RLConfig:
    H: int = 10
    T: int = 10_000
    actions: Sequence[float] = DEFAULT_ACTIONS
    budget: Optional[float] = None  # defaults to the largest action
    N_max: int = 300
    eta: Optional[float] = None  # defaults to 1 / (2 H (H + 1))
    c_bonus: float = 0.1
    w: float = 0.1  # switching weight
    cost_weight: float = 1.0  # C(N) = cost_weight * N
    defense_weight: float = 1.0
    switching_mode: str = "visited"
    exploit_coupling: float = 3.0  # synthetic env: mu_l = exploit_coupling * N
    carryover: bool = False

    def __post_init__(self):
        acts = tuple(float(a) for a in self.actions)
        if not acts:
            raise ConfigError("action set is empty")
        if any(b <= a for a, b in zip(acts, acts[1:])):
            raise ConfigError("actions must be strictly ascending")
        if acts[0] < 0:
            raise ConfigError("actions must be nonnegative")
        object.__setattr__(self, "actions", acts)
        if self.budget is None:
            object.__setattr__(self, "budget", acts[-1])
        if acts[-1] > self.budget * (1 + 1e-12):
            raise ConstraintError(f"action {acts[-1]:g} exceeds budget {self.budget:g}")
        if self.eta is None:
            object.__setattr__(self, "eta", default_eta(self.H))
        if not self.eta > 0:
            raise ParameterDomainError("eta must be > 0")
        if self.H < 1 or self.T < 1 or self.N_max < 1:
            raise ParameterDomainError("H, T and N_max must be >= 1")
        if self.c_bonus < 0 or self.w < 0 or self.cost_weight < 0 or self.defense_weight < 0:
            raise ParameterDomainError("weights must be nonnegative")
        if self.switching_mode not in SWITCH_MODES:
            raise ConfigError(f"switching_mode must be one of {SWITCH_MODES}")

    @property
    def C_bar(self) -> float:
        """sup of C over the indexed states."""
        return self.cost_weight * self.N_max

    def cost(self, N) -> float:
        return self.cost_weight * N

    def reward(self, N, action) -> float:
        s = min(N, self.N_max)
        top = self.C_bar + self.defense_weight * self.budget
        if top == 0:
            return 1.0
        return (top - self.cost(s) - self.defense_weight * action) / top

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["actions"] = list(self.actions)
        return d

    @classmethod
    def from_dict(cls, block):
        unknown = set(block) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown rl keys: {sorted(unknown)}")
        return cls(**block)


class LearnerState:
    """Estimate / belief tables, visit counts and the trigger schedule."""

    def __init__(self, cfg: RLConfig, T: Optional[int] = None):
        self.cfg = cfg
        H, S, A = cfg.H, cfg.N_max + 1, len(cfg.actions)
        self.Q_est = np.full((H, S, A), float(H))
        self.Q_belief = self.Q_est.copy()
        self.counts = np.zeros((H, S, A), dtype=np.int64)
        self.V_est = np.full((H + 1, S), float(H))
        self.V_est[H] = 0.0
        self.t = 0
        self.triggers = trigger_times(cfg.eta, H, cfg.T if T is None else T)
        self._trigger_set = set(self.triggers)
        self.touched = set()
        self.n_syncs = 0
        self.action_index = {a: i for i, a in enumerate(cfg.actions)}
        self.policy = np.zeros((H, S), dtype=np.int64)  # argmax of the belief table

    def state_index(self, N):
        return N if N < self.cfg.N_max else self.cfg.N_max

    def policy_rates(self):
        return np.asarray(self.cfg.actions)[self.policy]


def select_action(learner: LearnerState, h: int, N: int, actions=None) -> float:
    actions = learner.cfg.actions if actions is None else actions
    if len(actions) == 0:
        raise ConfigError("action set is empty")
    s = learner.state_index(N)
    return actions[int(np.argmax(learner.Q_belief[h, s]))]


def update_estimate(learner: LearnerState, h: int, N: int, action: float, next_N: int,
                    cfg: RLConfig = None) -> float:
    """One optimistic update of the estimate table.  Returns the new Q value."""
    cfg = learner.cfg if cfg is None else cfg
    if action > cfg.budget * (1 + 1e-12):
        raise ConstraintError(f"action {action:g} exceeds budget {cfg.budget:g}")
    try:
        a = learner.action_index[action]
    except KeyError:
        raise ConstraintError(f"action {action!r} not in the action set") from None
    H = cfg.H
    s, s2 = learner.state_index(N), learner.state_index(next_N)
    k = learner.counts[h, s, a] + 1
    learner.counts[h, s, a] = k
    alpha = (H + 1) / (H + k)
    bonus = cfg.c_bonus * math.sqrt(H ** 3 / k)
    target = cfg.reward(N, action) + learner.V_est[h + 1, s2] + bonus
    row = learner.Q_est[h, s]
    q = (1 - alpha) * row[a] + alpha * target
    row[a] = q
    learner.V_est[h, s] = min(H, row.max())
    learner.touched.add((h, s))
    return q


def maybe_sync_belief(learner: LearnerState, t: int) -> bool:
    """Copy the estimate rows touched this episode into the belief table on trigger episodes."""
    if t < 1:
        raise ParameterDomainError("episodes are numbered from 1")
    hit = t in learner._trigger_set
    if hit:
        for h, s in learner.touched:
            learner.Q_belief[h, s] = learner.Q_est[h, s]
            learner.policy[h, s] = int(np.argmax(learner.Q_belief[h, s]))
        learner.n_syncs += 1
    learner.touched = set()
    return hit


def switching_cost(pi_t, pi_prev, w, visited=None) -> float:
    """w * sum |pi_t - pi_prev| over all (h, N), or over ``visited`` (h, N) pairs."""
    if w == 0:
        return 0.0
    pi_t, pi_prev = np.asarray(pi_t, dtype=float), np.asarray(pi_prev, dtype=float)
    if visited is None:
        return float(w * np.abs(pi_t - pi_prev).sum())
    return float(w * sum(abs(pi_t[h, s] - pi_prev[h, s]) for h, s in visited))


@dataclass
class RunMetrics:
    cost: np.ndarray
    switch_cost: np.ndarray
    synced: np.ndarray
    exploits: np.ndarray
    patches: np.ndarray
    effort: np.ndarray
    arrivals: np.ndarray
    N_path: np.ndarray  # state at the start of every step, then the final state
    value: Optional[np.ndarray] = None  # V^{pi_t} when evaluated
    v_star: Optional[float] = None
    H: int = 10
    dt: float = 1.0

    @property
    def T(self):
        return self.cost.size

    @property
    def n_syncs(self):
        return int(self.synced.sum())

    @property
    def regret(self):
        if self.value is None or self.v_star is None:
            return None
        return regret_series(self.value, self.switch_cost, self.v_star)

    def exploit_rate(self):
        return float(self.exploits.sum() / (self.T * self.H * self.dt))

    def mean_effort(self):
        return float(self.effort.sum() / (self.T * self.H * self.dt))

    def queue(self):
        """Queue length seen at every step (raw, unclamped)."""
        return self.N_path[:-1]

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["episode", "cost", "switch_cost", "cumulative_regret", "sync"])
        reg = self.regret
        for t in range(self.T):
            wr.writerow([t + 1, repr(float(self.cost[t])), repr(float(self.switch_cost[t])),
                         "" if reg is None else repr(float(reg[t])), int(self.synced[t])])
        return _emit(buf, path)


def policy_csv(learner: LearnerState, path=None):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["h", "N", "action"])
    rates = learner.policy_rates()
    for h in range(rates.shape[0]):
        for s in range(rates.shape[1]):
            wr.writerow([h + 1, s, repr(float(rates[h, s]))])
    return _emit(buf, path)


def _emit(buf, path):
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def train(env, cfg: RLConfig, model: TabularModel = None, T: int = None,
          rollout_env: Callable = None, eval_rollouts: int = 8, eval_points: int = 40,
          learner: LearnerState = None):
    """Train for T episodes of H steps.

    Policy value V^{pi_t} is computed exactly from ``model`` when one is given
    (it only changes on sync episodes).  Without a model, ``rollout_env(i)``
    can supply fresh environments for ``eval_rollouts`` frozen-policy episodes
    on a geometric grid of episode indices.
    """
    T = cfg.T if T is None else int(T)
    H = cfg.H
    if hasattr(env, "episodes"):
        T = min(T, env.episodes(H))
    if T < 1:
        raise ConfigError("no complete episode fits in the environment")
    learner = learner or LearnerState(cfg, T)
    acts = list(cfg.actions)
    acts_arr = np.asarray(acts)
    cost = np.zeros(T)
    sw = np.zeros(T)
    synced = np.zeros(T, dtype=bool)
    exploits = np.zeros(T, dtype=np.int64)
    patches = np.zeros(T, dtype=np.int64)
    effort = np.zeros(T)
    arrivals = np.zeros(T, dtype=np.int64)
    N_path = np.empty(T * H + 1, dtype=np.int64)
    value = None
    v_star = None
    if model is not None:
        _, _, v_star = oracle_optimal(model)
        value = np.zeros(T)
        current_value = evaluate_policy(model, learner.policy)
    elif rollout_env is not None:
        value = np.full(T, np.nan)
        grid = set(np.unique(np.round(np.geomspace(1, T, eval_points)).astype(int)).tolist())
    prev_policy = learner.policy
    full = cfg.switching_mode == "full"
    k = 0
    N = env.reset()
    for t in range(1, T + 1):
        if t > 1:
            N = env.reset()
        pol = learner.policy
        visited = []
        c_ep = 0.0
        for h in range(H):
            s = N if N < cfg.N_max else cfg.N_max
            a_idx = int(pol[h, s])
            a = acts[a_idx]
            visited.append((h, s))
            N_path[k] = N
            k += 1
            N2 = env.step(a)
            info = env.last
            c_ep += cfg.cost(N) + cfg.defense_weight * a
            exploits[t - 1] += info.Nl
            patches[t - 1] += info.Nd
            effort[t - 1] += info.effort
            arrivals[t - 1] += info.V
            update_estimate(learner, h, N, a, N2, cfg)
            N = N2
        cost[t - 1] = c_ep
        if prev_policy is not pol:
            if full:
                sw[t - 1] = switching_cost(acts_arr[pol], acts_arr[prev_policy], cfg.w)
            else:
                sw[t - 1] = cfg.w * sum(abs(acts[pol[h, s]] - acts[prev_policy[h, s]]) for h, s in visited)
        if value is not None and model is not None:
            value[t - 1] = current_value
        elif value is not None and t in grid:
            value[t - 1] = _rollout_value(rollout_env, learner, cfg, eval_rollouts, t)
        # the policy executed next episode; copy before a sync mutates it
        prev_policy = pol
        if t in learner._trigger_set:
            learner.policy = pol.copy()
        synced[t - 1] = maybe_sync_belief(learner, t)
        learner.t = t
        if synced[t - 1] and model is not None:
            current_value = evaluate_policy(model, learner.policy)
    N_path[k] = N
    if value is not None and model is None:
        # piecewise-constant between evaluated episodes
        filled = np.where(np.isnan(value), np.nan, value)
        last = np.nan
        for i in range(T):
            if np.isnan(filled[i]):
                filled[i] = last
            else:
                last = filled[i]
        value = filled
    metrics = RunMetrics(cost, sw, synced, exploits, patches, effort, arrivals, N_path, value,
                         v_star, H, getattr(env, "dt", 1.0))
    return learner, metrics


def _rollout_value(factory, learner, cfg, n, t):
    tot = 0.0
    for i in range(n):
        env = factory(t * 1000 + i)
        N = env.reset()
        for h in range(cfg.H):
            s = min(N, cfg.N_max)
            a = cfg.actions[learner.policy[h, s]]
            tot += cfg.cost(N) + cfg.defense_weight * a
            N = env.step(a)
    return tot / n


def rollout(env, policy: Callable, H: int, episodes: int):
    """Run a fixed policy ``policy(h, N) -> rate``; returns per-step averages."""
    ex = pa = 0
    ef = 0.0
    Ns = []
    for _ in range(episodes):
        N = env.reset()
        for h in range(H):
            Ns.append(N)
            a = policy(h, N)
            N = env.step(a)
            ex += env.last.Nl
            pa += env.last.Nd
            ef += env.last.effort
    steps = episodes * H
    dt = getattr(env, "dt", 1.0)
    return {"exploit_rate": ex / (steps * dt), "patch_rate": pa / (steps * dt),
            "mean_effort": ef / (steps * dt), "mean_N": float(np.mean(Ns)),
            "queue": np.asarray(Ns, dtype=np.int64)}


class DefenseLearner(BaseEstimator):
    """Estimator wrapper: ``fit(env)`` trains, ``predict(N, h=0)`` returns rates."""

    def __init__(self, H=10, T=10_000, actions=DEFAULT_ACTIONS, budget=None, N_max=300, eta=None,
                 c_bonus=0.1, w=0.1, cost_weight=1.0, defense_weight=1.0, switching_mode="visited",
                 random_state=0):
        self.H = H
        self.T = T
        self.actions = actions
        self.budget = budget
        self.N_max = N_max
        self.eta = eta
        self.c_bonus = c_bonus
        self.w = w
        self.cost_weight = cost_weight
        self.defense_weight = defense_weight
        self.switching_mode = switching_mode
        self.random_state = random_state

    def config(self) -> RLConfig:
        return RLConfig(H=self.H, T=self.T, actions=tuple(self.actions), budget=self.budget,
                        N_max=self.N_max, eta=self.eta, c_bonus=self.c_bonus, w=self.w,
                        cost_weight=self.cost_weight, defense_weight=self.defense_weight,
                        switching_mode=self.switching_mode)

    def fit(self, env=None, y=None, model=None):
        """``env=None`` trains on a default synthetic surface seeded by ``random_state``."""
        from .envs import SyntheticSurfaceEnv

        self.config_ = self.config()
        if env is None:
            env = SyntheticSurfaceEnv(rng=self.random_state)
        self.learner_, self.metrics_ = train(env, self.config_, model=model)
        return self

    def predict(self, N, h=0):
        N = np.minimum(np.asarray(N, dtype=np.int64), self.config_.N_max)
        return self.learner_.policy_rates()[h, N]
