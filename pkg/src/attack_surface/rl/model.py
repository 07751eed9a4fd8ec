"""Known-model side of the defense problem: transition kernels, the optimal
policy by finite-horizon value iteration, exact policy evaluation and regret."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from ..errors import ConfigError, ModelError, ParameterDomainError

ROW_TOL = 1e-9


@dataclass
class TabularModel:
    """Finite MDP on states 0..S-1.

    ``P[a, s, s']`` is the kernel, ``state_cost[s]`` is C(s), and the per-step
    cost of action a is ``state_cost[s] + defense_weight * actions[a]``.
    ``init`` is the distribution of the first state of an episode.
    """

    P: np.ndarray
    actions: np.ndarray
    state_cost: np.ndarray
    H: int
    defense_weight: float = 1.0
    init: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.state_cost = np.asarray(self.state_cost, dtype=float)
        A, S, S2 = self.P.shape
        if S != S2 or A != self.actions.size or self.state_cost.size != S:
            raise ModelError("kernel, action and cost shapes disagree")
        if self.init is None:
            self.init = np.zeros(S)
            self.init[0] = 1.0
        self.init = np.asarray(self.init, dtype=float)
        self.validate()

    @property
    def n_states(self):
        return self.P.shape[1]

    def validate(self):
        if np.any(self.P < -ROW_TOL):
            raise ModelError("negative transition probability")
        dev = np.abs(self.P.sum(axis=2) - 1.0).max()
        if dev > ROW_TOL:
            raise ModelError(f"kernel rows do not sum to 1 (max deviation {dev:.3g})")
        if abs(self.init.sum() - 1.0) > ROW_TOL:
            raise ModelError("initial distribution does not sum to 1")

    def step_cost(self) -> np.ndarray:
        """(S, A) expected one-step cost."""
        return self.state_cost[:, None] + self.defense_weight * self.actions[None, :]


def synthetic_model(lam, kappa, actions, N_max, H, dt=1.0, cost_weight=1.0, defense_weight=1.0,
                    tail=1e-15) -> TabularModel:
    """Exact kernel of the synthetic surface with Poisson arrivals and no server cap.

    Defended and exploited candidates are independent Poisson counts, so all
    that matters is their sum X ~ Poisson((a + kappa N) dt) and
    N' = max(0, N + V - X).  Mass above N_max is lumped into N_max.
    """
    if N_max < 1:
        raise ParameterDomainError("N_max must be >= 1")
    actions = np.asarray(actions, dtype=float)
    S = N_max + 1
    v_hi = int(stats.poisson.isf(tail, lam * dt)) + 1 if lam > 0 else 0
    pv = stats.poisson.pmf(np.arange(v_hi + 1), lam * dt) if lam > 0 else np.array([1.0])
    pv[-1] += 1.0 - pv.sum()
    n_hi = N_max + v_hi
    n = np.arange(n_hi + 1)
    P = np.zeros((actions.size, S, S))
    for ai, a in enumerate(actions):
        for N in range(S):
            rate = (a + kappa * N) * dt
            # column j >= 1: X = n - j; column 0: X >= n
            pn = np.zeros(n_hi + 1)
            pn[N: N + v_hi + 1] = pv
            diff = n[:, None] - n[None, :]  # n - j
            M = np.where(diff >= 0, stats.poisson.pmf(np.maximum(diff, 0), rate), 0.0) if rate > 0 \
                else (diff == 0).astype(float)
            M[:, 0] = stats.poisson.sf(n - 1, rate) if rate > 0 else (n == 0).astype(float)
            row = pn @ M
            out = row[:S].copy()
            out[N_max] += row[S:].sum()
            out /= out.sum()
            P[ai, N] = out
    cost = cost_weight * np.arange(S, dtype=float)
    return TabularModel(P, actions, cost, H, defense_weight)


def single_state_model(actions, cost, H) -> TabularModel:
    A = len(actions)
    return TabularModel(np.ones((A, 1, 1)), actions, np.array([cost], dtype=float), H)


def oracle_optimal(model: TabularModel):
    """Optimal non-stationary policy by backward induction.

    Returns (policy, V, v_star): ``policy[h, s]`` is an action index (ties go
    to the smallest rate), ``V[h, s]`` the optimal cost-to-go with V[H] = 0,
    and ``v_star`` the expected episode cost from ``model.init``.
    """
    model.validate()
    H, S = model.H, model.n_states
    c = model.step_cost()
    V = np.zeros((H + 1, S))
    policy = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q = c + np.einsum("ast,t->sa", model.P, V[h + 1])
        policy[h] = np.argmin(Q, axis=1)
        V[h] = Q[np.arange(S), policy[h]]
    return policy, V, float(model.init @ V[0])


def evaluate_policy(model: TabularModel, policy) -> float:
    """Expected episode cost of a (H, S) table of action indices."""
    policy = np.asarray(policy)
    H, S = model.H, model.n_states
    c = model.step_cost()
    idx = np.arange(S)
    v = np.zeros(S)
    for h in range(H - 1, -1, -1):
        a = policy[h]
        v = c[idx, a] + np.einsum("st,t->s", model.P[a, idx], v)
    return float(model.init @ v)


def regret_series(values, switch_costs, v_star) -> np.ndarray:
    """Cumulative sum of V^{pi_t} + S_t - V*."""
    return np.cumsum(np.asarray(values) + np.asarray(switch_costs) - v_star)


def growth_exponent(regret, t_lo=1000, t_hi=None, n_points=10) -> float:
    """Slope of log Reg(t) against log t on a geometric grid of episodes."""
    regret = np.asarray(regret, dtype=float)
    t_hi = regret.size if t_hi is None else t_hi
    if t_lo >= t_hi:
        raise ConfigError("growth window is empty")
    ts = np.unique(np.round(np.geomspace(t_lo, t_hi, n_points)).astype(int))
    r = regret[ts - 1]
    if np.any(r <= 0):
        raise ModelError("regret must be positive on the fit window")
    return float(np.polyfit(np.log(ts), np.log(r), 1)[0])
