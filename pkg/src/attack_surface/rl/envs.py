"""Environments the defense learner interacts with.

Both expose ``reset() -> N`` at the start of an episode and
``step(action) -> N'`` for one slot, with the slot's flows left in
``last`` (arrivals V, defended Nd, exploited Nl, effort spent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ConstraintError, ParameterDomainError
from ..queue import SurfaceConfig, ArrivalSource, _race, poisson_inv
from ..stochastics.random import as_stream

_BLOCK = 1 << 16


@dataclass
class StepInfo:
    V: int = 0
    Nd: int = 0
    Nl: int = 0
    effort: float = 0.0


class SyntheticSurfaceEnv:
    """Model-based surface: Poisson (or adversarial) arrivals, exploit rate kappa * N.

    Episodes restart from ``N0`` unless ``carryover`` is set.
    """

    def __init__(self, lam=5.0, kappa=3.0, dt=1.0, arrivals="poisson", servers=None,
                 N0=0, carryover=False, v_max=10, rng=0):
        if lam < 0 or kappa < 0 or dt <= 0:
            raise ParameterDomainError("lam, kappa >= 0 and dt > 0 required")
        if arrivals not in ("poisson", "adversarial"):
            raise ConfigError(f"unknown arrival regime {arrivals!r}")
        self.lam, self.kappa, self.dt = float(lam), float(kappa), float(dt)
        self.arrivals = arrivals
        self.servers = servers
        self.N0 = int(N0)
        self.carryover = carryover
        self.v_max = v_max
        self.stream = as_stream(rng)
        self._arr_stream = self.stream.child("arrivals")
        self._race_gen = self.stream.child("race").generator
        self._cap = math.inf if servers is None else servers
        self._buf = np.empty(0, dtype=np.int64)
        self._U = []
        self._pos = 0
        self._block = 0
        self.N = self.N0
        self._started = False
        self.last = StepInfo()

    def _refill(self):
        s = self._arr_stream.child(self._block)
        if self.arrivals == "poisson":
            V = s.generator.poisson(self.lam * self.dt, _BLOCK)
        else:
            cfg = SurfaceConfig(lam=self.lam, dt=self.dt)
            src = ArrivalSource.adversarial(v_max=self.v_max)
            # keep the sinusoid phase continuous across blocks
            V = src.draw(cfg, (self._block + 1) * _BLOCK, s)[-_BLOCK:]
        self._buf = V.tolist()
        self._U = self._race_gen.random((_BLOCK, 3)).tolist()
        self._pos = 0
        self._block += 1

    def reset(self):
        if not (self.carryover and self._started):
            self.N = self.N0
        self._started = True
        return self.N

    def step(self, action: float):
        if action < 0:
            raise ConstraintError("defense rate must be nonnegative")
        if self._pos >= len(self._buf):
            self._refill()
        V = self._buf[self._pos]
        u1, u2, u3 = self._U[self._pos]
        self._pos += 1
        mu_l = self.kappa * self.N
        n = self.N + V
        d, e = _race(n, action, mu_l, self.dt, self._cap, u1, u2, u3)
        self.N = n - d - e
        self.last = StepInfo(V, d, e, action * self.dt)
        return self.N


class TraceReplayEnv:
    """Replays per-bin arrival counts from a trace; defended ~ Poisson(action * dt),
    truncated to what is open.

    N carries across episodes by default (episodes are consecutive blocks of
    bins).  ``effort_cap`` bounds the total defense effort over the run; once
    it is spent further actions are scaled down to what remains.
    """

    def __init__(self, arrivals, dt=1.0, N0=0, carryover=True, kappa=0.0, effort_cap=None, rng=0):
        self.arrivals = np.asarray(arrivals, dtype=np.int64)
        if self.arrivals.ndim != 1 or np.any(self.arrivals < 0):
            raise ConfigError("arrivals must be a 1-d array of nonnegative counts")
        self.dt = float(dt)
        self.N0 = int(N0)
        self.carryover = carryover
        self.kappa = float(kappa)
        self.effort_cap = effort_cap
        self.stream = as_stream(rng)
        self._U = self.stream.child("defense").generator.random((self.arrivals.size, 2)).tolist()
        self._V = self.arrivals.tolist()
        self.pos = 0
        self.effort_used = 0.0
        self.N = self.N0
        self._started = False
        self.last = StepInfo()

    @property
    def n_steps(self):
        return self.arrivals.size

    def episodes(self, H):
        return self.arrivals.size // H

    def reset(self):
        if not (self.carryover and self._started):
            self.N = self.N0
        self._started = True
        return self.N

    def step(self, action: float):
        if action < 0:
            raise ConstraintError("defense rate must be nonnegative")
        if self.pos >= self.arrivals.size:
            raise ConfigError("trace exhausted")
        if self.effort_cap is not None:
            left = max(self.effort_cap - self.effort_used, 0.0)
            action = min(action, left / self.dt)
        V = self._V[self.pos]
        u1, u2 = self._U[self.pos]
        self.pos += 1
        n = self.N + V
        mu_l = self.kappa * self.N
        d = min(poisson_inv(u1, action * self.dt), n) if action > 0 else 0
        e = min(poisson_inv(u2, mu_l * self.dt), n - d) if mu_l > 0 else 0
        self.N = n - d - e
        self.effort_used += action * self.dt
        self.last = StepInfo(V, d, e, action * self.dt)
        return self.N


def replay_static(arrivals, rates, dt=1.0, N0=0, rng=0):
    """Queue path under a fixed per-bin defense rate schedule (the static baseline).

    ``rates`` is a scalar or one rate per bin.  Returns (N path of length
    len(arrivals) + 1, defended counts).
    """
    arrivals = np.asarray(arrivals, dtype=np.int64)
    rates = np.broadcast_to(np.asarray(rates, dtype=float), arrivals.shape)
    env = TraceReplayEnv(arrivals, dt, N0, carryover=True, rng=rng)
    N = np.empty(arrivals.size + 1, dtype=np.int64)
    Nd = np.empty(arrivals.size, dtype=np.int64)
    N[0] = env.reset()
    for k in range(arrivals.size):
        N[k + 1] = env.step(float(rates[k]))
        Nd[k] = env.last.Nd
    return N, Nd
