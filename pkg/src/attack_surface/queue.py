"""Discrete-time attack-surface queue.

One slot of length ``dt`` does, in order:

1. compute the exploit rate from the surface size at the start of the slot,
   ``mu_l = beta * lam_ref * N``;
2. add the slot's arrivals ``V``;
3. race defense against exploitation on the post-arrival count
   (:func:`race_outcome`);
4. ``N' = max(0, N + V - Nd - Nl)``.  Departures never exceed the count, so the
   clamp is asserted rather than relied upon.

All randomness for the race is drawn as uniforms and turned into Poisson and
hypergeometric variates by inversion, so the per-slot Python loop stays cheap
and a trajectory depends only on ``(seed, stream)``.

Two job-level engines live here as well: an M/G/inf occupancy simulator
(stationary start) and a G/G/m-b simulator used to calibrate (m, b) against a
trace.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, replace, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ConstraintError, ParameterDomainError
from .stochastics import distributions as D
from .stochastics.random import RandomStream, as_stream

COUPLINGS = ("static-defense", "policy-driven")
_CHUNK = 1 << 16


@dataclass(frozen=True)
class SurfaceConfig:
    """Rates and capacities of one queue regime.

    ``servers=None`` means no server cap; ``budget=inf`` means no rate cap.
    ``lam_ref=None`` couples the exploit rate to the current ``lam``.
    """

    lam: float
    alpha: float = 1.0
    beta: float = 0.0
    a: float = 1.0
    budget: float = math.inf
    servers: Optional[int] = None
    dt: float = 1.0
    coupling: str = "static-defense"
    lam_ref: Optional[float] = None

    def __post_init__(self):
        if self.lam < 0 or self.dt <= 0:
            raise ParameterDomainError("need lam >= 0 and dt > 0")
        if self.alpha < 0 or self.beta < 0 or self.budget < 0:
            raise ParameterDomainError("alpha, beta and budget must be nonnegative")
        if self.a < 1:
            raise ParameterDomainError("amplification factor must be >= 1")
        if self.servers is not None and (int(self.servers) != self.servers or self.servers < 1):
            raise ParameterDomainError("servers must be an integer >= 1")
        if self.coupling not in COUPLINGS:
            raise ParameterDomainError(f"coupling must be one of {COUPLINGS}")
        if self.coupling == "static-defense" and self.alpha * self.lam > self.budget * (1 + 1e-12):
            raise ConstraintError(
                f"static defense rate alpha*lam={self.alpha * self.lam:g} exceeds budget {self.budget:g}"
            )

    @property
    def kappa(self) -> float:
        """Per-vulnerability exploit rate: mu_l = kappa * N."""
        ref = self.lam if self.lam_ref is None else self.lam_ref
        return self.beta * ref

    @property
    def static_defense_rate(self) -> float:
        return self.alpha * self.lam

    @property
    def server_cap(self) -> float:
        return math.inf if self.servers is None else int(self.servers)

    def to_dict(self):
        out = asdict(self)
        out["budget"] = None if math.isinf(self.budget) else self.budget
        return out

    @classmethod
    def from_dict(cls, block):
        block = dict(block)
        if block.get("budget") is None:
            block["budget"] = math.inf
        known = set(cls.__dataclass_fields__)
        unknown = set(block) - known
        if unknown:
            raise ConfigError(f"unknown surface keys: {sorted(unknown)}")
        return cls(**block)


@dataclass
class SurfaceState:
    """Queue state plus what happened in the slot that produced it."""

    N: int = 0
    clock: int = 0
    V: int = 0
    Nd: int = 0
    Nl: int = 0
    mu_d: float = 0.0
    mu_l: float = 0.0


# -- inversion samplers -------------------------------------------------------

def poisson_inv(u: float, mean: float) -> int:
    """Poisson(mean) quantile at ``u`` by sequential search."""
    if mean <= 0.0:
        return 0
    if mean > 600.0:
        from scipy.stats import poisson

        return int(poisson.ppf(u, mean))
    p = math.exp(-mean)
    cdf = p
    k = 0
    while u > cdf:
        k += 1
        p *= mean / k
        cdf += p
        if p < 1e-300 and k > mean:
            break
    return k


def hypergeom_inv(u: float, good: int, bad: int, n: int) -> int:
    """Number of 'good' items in a size-n draw without replacement, by inversion."""
    lo = max(0, n - bad)
    hi = min(n, good)
    if lo == hi:
        return lo
    lg = math.lgamma
    logp = (
        lg(good + 1) - lg(lo + 1) - lg(good - lo + 1)
        + lg(bad + 1) - lg(n - lo + 1) - lg(bad - n + lo + 1)
        - (lg(good + bad + 1) - lg(n + 1) - lg(good + bad - n + 1))
    )
    p = math.exp(logp)
    cdf = p
    k = lo
    while u > cdf and k < hi:
        p *= (good - k) * (n - k) / ((k + 1) * (bad - n + k + 1))
        k += 1
        cdf += p
    return k


def _race(n, mu_d, mu_l, dt, m, u1, u2, u3):
    d = poisson_inv(u1, mu_d * dt) if mu_d > 0 else 0
    if d > m:
        d = int(m)
    e = poisson_inv(u2, mu_l * dt) if mu_l > 0 else 0
    if d + e <= n:
        return d, e
    nd = hypergeom_inv(u3, d, e, n)
    return nd, n - nd


def race_outcome(n, mu_d, mu_l, dt, m=None, rng=None, budget=math.inf):
    """Defended and exploited counts among ``n`` open vulnerabilities in one slot.

    Candidate completions D ~ Poisson(min(mu_d, budget) dt) capped at m and
    E ~ Poisson(mu_l dt).  When D + E exceeds n the n departures are split
    by a draw without replacement, which keeps the per-departure defense
    probability at mu_d / (mu_d + mu_l).
    """
    if n < 0 or mu_d < 0 or mu_l < 0:
        raise ParameterDomainError("race_outcome needs n, mu_d, mu_l >= 0")
    gen = _gen(rng)
    u = gen.random(3)
    cap = math.inf if m is None else m
    return _race(int(n), min(mu_d, budget), mu_l, dt, cap, *u)


def _gen(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator


# -- arrivals -----------------------------------------------------------------

@dataclass
class ArrivalSource:
    """Per-slot arrival counts.

    kind: ``poisson`` (rate ``lam``, default the config's lam), ``trace``
    (explicit ``counts``), ``adversarial`` (sinusoid plus seeded bursts, clipped
    to [0, v_max]) or ``renewal`` (counts of a renewal process with
    inter-arrival law ``dist``).
    """

    kind: str = "poisson"
    lam: Optional[float] = None
    counts: Optional[Sequence[int]] = None
    v_max: int = 10
    period: float = 200.0
    burst_prob: float = 0.05
    dist: Optional[D.DistributionSpec] = None

    def __post_init__(self):
        if self.kind not in ("poisson", "trace", "adversarial", "renewal"):
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        if self.kind == "trace" and self.counts is None:
            raise ConfigError("trace arrivals need counts")
        if self.kind == "renewal" and self.dist is None:
            raise ConfigError("renewal arrivals need an inter-arrival distribution")
        if self.kind == "adversarial" and self.v_max < 0:
            raise ConfigError("v_max must be >= 0")

    @classmethod
    def poisson(cls, lam=None):
        return cls("poisson", lam=lam)

    @classmethod
    def trace(cls, counts):
        return cls("trace", counts=np.asarray(counts, dtype=np.int64))

    @classmethod
    def adversarial(cls, v_max=10, period=200.0, burst_prob=0.05):
        return cls("adversarial", v_max=v_max, period=period, burst_prob=burst_prob)

    @classmethod
    def renewal(cls, dist):
        return cls("renewal", dist=dist)

    def draw(self, cfg: SurfaceConfig, horizon: int, stream: RandomStream) -> np.ndarray:
        gen = stream.generator
        if self.kind == "poisson":
            lam = cfg.lam if self.lam is None else self.lam
            return gen.poisson(lam * cfg.dt, horizon).astype(np.int64)
        if self.kind == "trace":
            c = np.asarray(self.counts, dtype=np.int64)
            if c.size < horizon:
                raise ConfigError(f"trace has {c.size} slots, horizon needs {horizon}")
            if np.any(c < 0):
                raise ConfigError("trace counts must be nonnegative")
            return c[:horizon].copy()
        if self.kind == "adversarial":
            t = np.arange(horizon)
            base = 0.5 * self.v_max * (1 + np.sin(2 * np.pi * t / self.period))
            burst = gen.random(horizon) < self.burst_prob
            v = np.where(burst, self.v_max, np.rint(base))
            return np.clip(v, 0, self.v_max).astype(np.int64)
        return renewal_counts(self.dist, horizon, cfg.dt, gen)


def renewal_counts(dist, horizon, dt, gen):
    """Arrivals per slot of a renewal process started at time 0."""
    T = horizon * dt
    m = D.mean(dist)
    times = []
    t = 0.0
    while t < T:
        n = max(int(1.2 * (T - t) / m) + 64, 64)
        gaps = D.sample(dist, gen, size=n)
        cum = t + np.cumsum(gaps)
        times.append(cum[cum < T])
        t = cum[-1]
    allt = np.concatenate(times) if times else np.empty(0)
    idx = np.floor(allt / dt).astype(np.int64)
    return np.bincount(idx, minlength=horizon)[:horizon].astype(np.int64)


# -- trajectory ---------------------------------------------------------------

@dataclass
class Trajectory:
    N: np.ndarray  # length horizon + 1, N[0] is the initial state
    V: np.ndarray
    Nd: np.ndarray
    Nl: np.ndarray
    mu_d: np.ndarray
    mu_l: np.ndarray
    dt: float = 1.0

    FIELDS = ("slot", "N", "V", "Nd", "Nl", "mu_d", "mu_l")

    @property
    def horizon(self):
        return self.V.size

    def check(self):
        lhs = self.N[1:] - self.N[:-1]
        if not np.array_equal(lhs, self.V - self.Nd - self.Nl):
            raise AssertionError("per-slot conservation violated")
        if np.any(self.N < 0):
            raise AssertionError("negative surface size")
        return True

    def rates(self, burn_in: int = 0):
        """Time-averaged breach, patch and arrival rates per unit time."""
        s = slice(burn_in, None)
        t = (self.horizon - burn_in) * self.dt
        return {
            "arrival": float(self.V[s].sum() / t),
            "breach": float(self.Nl[s].sum() / t),
            "defense": float(self.Nd[s].sum() / t),
        }

    def occupancy(self, burn_in: int = 0) -> np.ndarray:
        """Fraction of slots spent at each N (state at slot start)."""
        n = self.N[burn_in:-1]
        return np.bincount(n) / n.size

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        for t in range(self.horizon):
            w.writerow([t, int(self.N[t]), int(self.V[t]), int(self.Nd[t]), int(self.Nl[t]),
                        repr(float(self.mu_d[t])), repr(float(self.mu_l[t]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# -- dynamics -----------------------------------------------------------------

def _defense_rate(cfg: SurfaceConfig, action):
    if cfg.coupling == "static-defense":
        return cfg.static_defense_rate
    if action is None:
        raise ConfigError("policy-driven coupling needs a defense action")
    if action < 0:
        raise ConstraintError("defense rate must be nonnegative")
    if action > cfg.budget * (1 + 1e-12):
        raise ConstraintError(f"defense rate {action:g} exceeds budget {cfg.budget:g}")
    return float(action)


def step(state: SurfaceState, cfg: SurfaceConfig, V: int, mu_d_action=None, rng=None) -> SurfaceState:
    """Advance one slot.  Returns the successor state, which records the slot's flows."""
    if V < 0:
        raise ParameterDomainError("arrivals must be nonnegative")
    mu_d = _defense_rate(cfg, mu_d_action)
    mu_l = cfg.kappa * state.N
    u = _gen(rng).random(3)
    n = state.N + int(V)
    nd, nl = _race(n, min(mu_d, cfg.budget), mu_l, cfg.dt, cfg.server_cap, *u)
    nxt = n - nd - nl
    assert nxt >= 0
    return SurfaceState(nxt, state.clock + 1, int(V), nd, nl, mu_d, mu_l)


def simulate(cfg: SurfaceConfig, horizon: int, arrivals: ArrivalSource = None,
             policy: Callable = None, rng=None, N0: int = 0) -> Trajectory:
    """Run ``horizon`` slots.  ``policy(state) -> defense rate`` is required in
    policy-driven mode and ignored in static-defense mode."""
    if horizon < 1:
        raise ParameterDomainError("horizon must be >= 1")
    if cfg.coupling == "policy-driven" and policy is None:
        raise ConfigError("policy-driven coupling needs a policy")
    stream = as_stream(rng)
    arrivals = arrivals or ArrivalSource.poisson()
    V = arrivals.draw(cfg, horizon, stream.child("arrivals"))
    race_gen = stream.child("race").generator

    N = np.empty(horizon + 1, dtype=np.int64)
    Nd = np.zeros(horizon, dtype=np.int64)
    Nl = np.zeros(horizon, dtype=np.int64)
    mu_d_arr = np.empty(horizon)
    mu_l_arr = np.empty(horizon)
    N[0] = n = int(N0)
    dt, kappa, cap, budget = cfg.dt, cfg.kappa, cfg.server_cap, cfg.budget
    static = cfg.coupling == "static-defense"
    mu_d = cfg.static_defense_rate if static else 0.0
    state = SurfaceState(n, 0)
    Vl = V.tolist()

    for start in range(0, horizon, _CHUNK):
        stop = min(start + _CHUNK, horizon)
        U = race_gen.random((stop - start, 3)).tolist()
        for t in range(start, stop):
            if not static:
                state.N, state.clock = n, t
                mu_d = _defense_rate(cfg, policy(state))
            mu_l = kappa * n
            n += Vl[t]
            u1, u2, u3 = U[t - start]
            d, e = _race(n, mu_d if mu_d < budget else budget, mu_l, dt, cap, u1, u2, u3)
            n -= d + e
            if n < 0:
                raise AssertionError("clamp reached; departures exceeded the surface size")
            N[t + 1] = n
            Nd[t] = d
            Nl[t] = e
            mu_d_arr[t] = mu_d
            mu_l_arr[t] = mu_l
    return Trajectory(N, V, Nd, Nl, mu_d_arr, mu_l_arr, dt)


def apply_amplification(cfg: SurfaceConfig, a: float, mode: str = "symmetric") -> SurfaceConfig:
    """Scale a regime by an automation factor ``a >= 1``.

    symmetric: arrivals, exploit coupling and defense (rate and budget) all
    scale by ``a``.  attack-only: arrivals and exploit coupling scale while
    the absolute defense rate and budget stay where they were.
    """
    if a < 1:
        raise ParameterDomainError("amplification factor must be >= 1")
    if mode not in ("symmetric", "attack-only"):
        raise ParameterDomainError("mode must be 'symmetric' or 'attack-only'")
    if a == 1:
        return cfg
    lam_ref = None if cfg.lam_ref is None else cfg.lam_ref * a
    if mode == "symmetric":
        return replace(cfg, lam=cfg.lam * a, lam_ref=lam_ref, budget=cfg.budget * a, a=cfg.a * a)
    # static defense is alpha * lam; keep the product fixed while lam grows
    return replace(cfg, lam=cfg.lam * a, lam_ref=lam_ref, alpha=cfg.alpha / a, a=cfg.a * a)


# -- job-level engines --------------------------------------------------------

def simulate_mginf(lam: float, service: D.DistributionSpec, horizon: int, dt: float = 1.0,
                   rng=None, stationary: bool = True, chunk: int = 1 << 20) -> np.ndarray:
    """Occupancy N(k dt), k = 0..horizon-1, of an M/G/inf queue.

    With ``stationary=True`` the system starts in equilibrium: a Poisson(lam
    E[S]) number of jobs with residual lifetimes from the equilibrium law.
    """
    stream = as_stream(rng)
    gen = stream.child("mginf").generator
    T = horizon * dt
    diff = np.zeros(horizon + 1, dtype=np.int64)
    if stationary:
        n0 = gen.poisson(lam * D.mean(service))
        if n0:
            r = D.sample_residual(service, gen, size=n0)
            end = np.minimum(np.ceil(r / dt), horizon).astype(np.int64)
            diff[0] += n0
            np.subtract.at(diff, end, 1)
    total = gen.poisson(lam * T)
    done = 0
    while done < total:
        n = min(chunk, total - done)
        a = gen.random(n) * T
        s = D.sample(service, gen, size=n)
        first = np.ceil(a / dt).astype(np.int64)
        last = np.minimum(np.ceil((a + s) / dt), horizon).astype(np.int64)
        keep = first < last
        diff += np.bincount(first[keep], minlength=horizon + 1)
        diff -= np.bincount(last[keep], minlength=horizon + 1)
        done += n
    return np.cumsum(diff[:-1])


def simulate_ggmb(interarrival: D.DistributionSpec, service: D.DistributionSpec,
                  servers: Optional[int], budget: float, horizon: int, dt: float = 1.0,
                  rng=None, warmup: float = 0.0) -> np.ndarray:
    """Occupancy at slot boundaries of a FCFS G/G/m-b queue.

    ``k`` busy servers each work at speed ``min(1, budget * E[S] / k)``, so
    the total completion rate never exceeds ``budget`` jobs per unit time.
    ``warmup`` time units are simulated and discarded first.
    """
    samples = warmup + dt * np.arange(horizon)
    occ, _, _ = _ggmb_engine(interarrival, service, servers, budget, samples[-1], rng,
                             samples=samples)
    return occ


def ggmb_jobs(interarrival: D.DistributionSpec, service: D.DistributionSpec,
              servers: Optional[int], budget: float, t_end: float, rng=None,
              t_start: float = 0.0, arrivals_until: float = None):
    """Job-level G/G/m-b run over [t_start, t_end).

    Arrivals stop at ``arrivals_until`` (default ``t_end``); service goes on
    until ``t_end``.  Returns (arrival_times, departure_times); jobs still in
    the system at ``t_end`` have departure NaN.
    """
    _, arr, dep = _ggmb_engine(interarrival, service, servers, budget, t_end, rng,
                               t_start=t_start, record=True, arrivals_until=arrivals_until)
    return arr, dep


def _ggmb_engine(interarrival, service, servers, budget, t_stop, rng, samples=None,
                 t_start=0.0, record=False, arrivals_until=None):
    t_arr_stop = t_stop if arrivals_until is None else arrivals_until
    if servers is not None and servers < 1:
        raise ParameterDomainError("servers must be >= 1")
    if budget <= 0:
        raise ParameterDomainError("budget must be > 0")
    stream = as_stream(rng)
    g_ia = stream.child("ia").generator
    g_st = stream.child("st").generator
    m = math.inf if servers is None else int(servers)
    cap_work = budget * D.mean(service)  # total work per unit time

    block = 4096
    ia_buf = D.sample(interarrival, g_ia, size=block).tolist()
    st_buf = D.sample(service, g_st, size=block).tolist()
    ia_i, st_i = 1, 0

    t = t_start
    vclock = 0.0  # work done so far by any one in-service job
    in_service = []  # heap of (virtual finish, job id)
    waiting = deque()  # (job id, work)
    n = 0
    next_arr = t_start + ia_buf[0]
    if next_arr >= t_arr_stop:
        next_arr = math.inf
    arrivals, departures = [], []

    if samples is not None:
        occ = np.empty(samples.size, dtype=np.int64)
        sample_list = samples.tolist()
    else:
        occ = None
        sample_list = []
    k_out, n_samples = 0, len(sample_list)

    while True:
        k = len(in_service)
        speed = 1.0 if k <= cap_work else cap_work / k
        t_done = t + (in_service[0][0] - vclock) / speed if k else math.inf
        t_next = next_arr if next_arr < t_done else t_done
        while k_out < n_samples and sample_list[k_out] < t_next:
            occ[k_out] = n
            k_out += 1
        if t_next > t_stop:
            break
        if k:
            vclock += (t_next - t) * speed
        t = t_next
        if t_done <= next_arr:
            _, job = heapq.heappop(in_service)
            n -= 1
            if record:
                departures[job] = t
            if waiting:
                j, w = waiting.popleft()
                heapq.heappush(in_service, (vclock + w, j))
        else:
            if st_i == block:
                st_buf = D.sample(service, g_st, size=block).tolist()
                st_i = 0
            work = st_buf[st_i]
            st_i += 1
            job = len(arrivals) if record else 0
            if record:
                arrivals.append(t)
                departures.append(math.nan)
            n += 1
            if len(in_service) < m:
                heapq.heappush(in_service, (vclock + work, job))
            else:
                waiting.append((job, work))
            if ia_i == block:
                ia_buf = D.sample(interarrival, g_ia, size=block).tolist()
                ia_i = 0
            next_arr = t + ia_buf[ia_i]
            ia_i += 1
            if next_arr >= t_arr_stop:
                next_arr = math.inf
    if occ is not None:
        occ[k_out:] = n
    return occ, np.array(arrivals), np.array(departures)
