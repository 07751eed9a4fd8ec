"""Maximum-likelihood fitting of the families in :mod:`.distributions`.

Closed forms are used for exponential, lognormal, pareto (x_m = sample
minimum) and inverse-gaussian.  The remaining single families are fitted by
Nelder-Mead on log-parameters with restarts; two-component mixtures by EM
whose M-step is a weighted fit of each component.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import optimize, special
from sklearn.base import BaseEstimator

from ..errors import ConfigError, FitFailedError, InsufficientDataError
from . import distributions as D
from .divergence import Histogram, divergence_table

MIN_SAMPLES = 10

DEFAULT_CANDIDATES = (
    "exponential",
    "gamma",
    "weibull",
    "lognormal",
    "loglogistic",
    "pareto",
    "generalized-pareto",
    "inverse-gaussian",
    ("mixture2", "loglogistic", "generalized-pareto"),
    ("mixture2", "gamma", "inverse-gaussian"),
)


def _check_samples(x, weights=None):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise InsufficientDataError("samples must be finite and strictly positive")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("weights must be nonnegative, same length as samples")
    return x, w


# negative log-likelihoods on log-parameters ----------------------------------
# each returns sum(w * logpdf) for theta = log(params)

def _ll_gamma(th, x, lx, w):
    k, s = np.exp(th)
    return np.sum(w * ((k - 1) * lx - x / s)) - w.sum() * (special.gammaln(k) + k * math.log(s))


def _ll_weibull(th, x, lx, w):
    k, lam = np.exp(th)
    z = x / lam
    return np.sum(w * ((k - 1) * (lx - math.log(lam)) - z ** k)) + w.sum() * (math.log(k) - math.log(lam))


def _softplus(y):
    # log(1 + e^y); several times faster than np.logaddexp(0, y)
    return np.maximum(y, 0.0) + np.log1p(np.exp(-np.abs(y)))


def _ll_loglogistic(th, x, lx, w):
    k, s = np.exp(th)
    lz = lx - math.log(s)
    return np.sum(w * ((k - 1) * lz - 2 * _softplus(k * lz))) + w.sum() * (math.log(k) - math.log(s))


def _ll_gpd(th, x, lx, w):
    xi, s = np.exp(th)
    return -np.sum(w * (1 + 1 / xi) * np.log1p(xi * x / s)) - w.sum() * math.log(s)


_NUMERIC = {
    "gamma": _ll_gamma,
    "weibull": _ll_weibull,
    "loglogistic": _ll_loglogistic,
    "generalized-pareto": _ll_gpd,
}


def _initial(family, x, lx, w):
    W = w.sum()
    m = np.dot(w, x) / W
    v = max(np.dot(w, (x - m) ** 2) / W, 1e-12 * m * m)
    lm = np.dot(w, lx) / W
    ls = math.sqrt(max(np.dot(w, (lx - lm) ** 2) / W, 1e-12))
    if family == "gamma":
        k = m * m / v
        return [k, v / m]
    if family == "weibull":
        k = max(1.2 / ls, 0.05)
        return [k, m / math.gamma(1 + 1 / k)]
    if family == "loglogistic":
        return [max(math.pi / (math.sqrt(3) * ls), 0.05), math.exp(lm)]
    if family == "generalized-pareto":
        xi = 0.5 * (1 - m * m / v) if v > m * m else 0.1
        xi = min(max(xi, 0.05), 0.95)
        return [xi, m * (1 - xi)]
    raise AssertionError(family)


def _closed_form(family, x, lx, w):
    W = w.sum()
    if family == "exponential":
        return D.exponential(W / np.dot(w, x))
    if family == "lognormal":
        mu = np.dot(w, lx) / W
        sig = math.sqrt(max(np.dot(w, (lx - mu) ** 2) / W, 1e-300))
        return D.lognormal(mu, sig)
    if family == "pareto":
        # weighted fits (mixture M-steps) ignore points the component barely owns
        xm = float(x[w >= 0.1 * w.max()].min())
        w = np.where(x >= xm, w, 0.0)
        W = w.sum()
        s = np.dot(w, np.maximum(lx - math.log(xm), 0.0))
        if s <= 0:
            raise FitFailedError("degenerate sample: all values equal the minimum")
        return D.pareto(xm, W / s)
    if family == "inverse-gaussian":
        mu = np.dot(w, x) / W
        inv = np.dot(w, 1.0 / x - 1.0 / mu) / W
        if inv <= 0:
            raise FitFailedError("degenerate sample for inverse-gaussian")
        return D.inverse_gaussian(mu, 1.0 / inv)
    return None


def _numeric_fit(family, x, lx, w, restarts, maxfev, rng, start=None):
    ll = _NUMERIC[family]
    base = np.log(start if start is not None else _initial(family, x, lx, w))

    def nll(th):
        if np.any(np.abs(th) > 50):
            return np.inf
        with np.errstate(all="ignore"):
            val = ll(th, x, lx, w)
        return -val if np.isfinite(val) else np.inf

    best = None
    converged = False
    for r in range(max(restarts, 1)):
        th0 = base if r == 0 else base + rng.normal(0.0, 0.5, base.size)
        res = optimize.minimize(
            nll, th0, method="Nelder-Mead",
            options={"maxfev": maxfev, "xatol": 1e-8, "fatol": 1e-9 * max(1.0, abs(nll(th0)))},
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
        converged = converged or (res.success and np.isfinite(res.fun))
    if best is None:
        raise FitFailedError(f"{family}: likelihood not finite at any start")
    params = dict(zip(D.PARAM_NAMES[family], np.exp(best.x)))
    spec = D.DistributionSpec(family, params)
    if not converged:
        raise FitFailedError(f"{family}: optimizer did not converge", best=spec, loglik=-best.fun)
    return spec


def _component_fit(family, x, lx, w, rng, start=None, restarts=5, maxfev=10_000):
    spec = _closed_form(family, x, lx, w)
    if spec is not None:
        return spec
    return _numeric_fit(family, x, lx, w, restarts, maxfev, rng, start)


def loglik(spec, x, weights=None) -> float:
    x = np.asarray(x, dtype=float)
    lp = D.logpdf(spec, x)
    if weights is not None:
        lp = lp * weights
    return float(np.sum(lp))


def fit_mle(family, samples, weights=None, components=None, restarts=5,
            maxfev=10_000, random_state=0):
    """Fit ``family`` to positive samples.  Returns (spec, log-likelihood).

    For ``family='mixture2'`` pass ``components=(fam_a, fam_b)``; a tuple
    ``('mixture2', fam_a, fam_b)`` is accepted as ``family`` as well.
    """
    if isinstance(family, (tuple, list)):
        family, *components = family
    family = D.canonical_family(family)
    x, w = _check_samples(samples, weights)
    lx = np.log(x)
    rng = np.random.default_rng(random_state)
    if family == "mixture2":
        if not components or len(components) != 2:
            raise ConfigError("mixture2 fit needs two component families")
        spec = _fit_mixture(components, x, lx, w, rng, restarts)
    else:
        spec = _component_fit(family, x, lx, w, rng, restarts=restarts, maxfev=maxfev)
    return spec, loglik(spec, x, w)


def _fit_mixture(components, x, lx, w, rng, restarts, max_iter=100, tol=1e-5):
    fa, fb = (D.canonical_family(c) for c in components)
    order = np.argsort(x)
    best, best_ll = None, -np.inf
    splits = (0.5, 0.2, 0.8)[: max(restarts, 1)]
    for q in splits:
        # hard initial split: first component takes the lower part of the data
        resp = np.zeros(x.size)
        resp[order[: max(int(q * x.size), 2)]] = 1.0
        resp = np.clip(resp, 0.02, 0.98)
        spec, ll = None, -np.inf
        sa = sb = None
        try:
            for _ in range(max_iter):
                weight = float(np.dot(w, resp) / w.sum())
                sa = _component_fit(fa, x, lx, w * resp, rng, _start(sa), restarts=1, maxfev=400)
                sb = _component_fit(fb, x, lx, w * (1 - resp), rng, _start(sb), restarts=1, maxfev=400)
                spec = D.mixture2(min(max(weight, 0.0), 1.0), sa, sb)
                la = np.log(max(weight, 1e-300)) + D.logpdf(sa, x)
                lb = np.log(max(1 - weight, 1e-300)) + D.logpdf(sb, x)
                tot = np.logaddexp(la, lb)
                new_ll = float(np.dot(w, tot))
                resp = np.exp(la - tot)
                if new_ll - ll < tol * abs(new_ll):
                    ll = new_ll
                    break
                ll = new_ll
        except FitFailedError as err:
            if err.best is None and spec is None:
                continue
        if spec is not None and np.isfinite(ll) and ll > best_ll:
            best, best_ll = spec, ll
    if best is None:
        raise FitFailedError(f"mixture2({fa}, {fb}): EM failed from every start")
    return best


def _start(spec):
    if spec is None or spec.family not in _NUMERIC:
        return None
    return [spec.params[n] for n in D.PARAM_NAMES[spec.family]]


def label(candidate) -> str:
    if isinstance(candidate, (tuple, list)):
        fam, a, b = candidate
        return f"{D.canonical_family(fam)}({D.canonical_family(a)}+{D.canonical_family(b)})"
    return D.canonical_family(candidate)


def log_edges(x, n_bins=40):
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        hi = lo * (1 + 1e-6) + 1e-12
    return np.geomspace(lo, hi, n_bins + 1)


def model_histogram(spec, edges) -> Histogram:
    """Bin masses of ``spec`` with the outer tails folded into the end bins."""
    sf = np.asarray(D.survival(spec, edges), dtype=float)
    mass = -np.diff(sf)
    mass[0] += 1.0 - sf[0]
    mass[-1] += sf[-1]
    return Histogram(edges, np.maximum(mass, 0.0), "edges")


class DistributionFitter(BaseEstimator):
    """Fit every candidate family and keep the one with the lowest divergence.

    After ``fit``: ``best_spec_``, ``best_label_``, ``table_`` (label ->
    metrics dict plus ``loglik``) and ``failures_`` (label -> message).
    """

    def __init__(self, candidates=DEFAULT_CANDIDATES, metric="KL", n_bins=40,
                 restarts=5, random_state=0):
        self.candidates = candidates
        self.metric = metric
        self.n_bins = n_bins
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y=None):
        x, _ = _check_samples(X)
        if not self.candidates:
            raise ConfigError("candidate list is empty")
        edges = log_edges(x, self.n_bins)
        emp = Histogram.from_samples(x, edges)
        self.table_, self.specs_, self.failures_ = {}, {}, {}
        for cand in self.candidates:
            name = label(cand)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    spec, ll = fit_mle(cand, x, restarts=self.restarts,
                                       random_state=self.random_state)
            except FitFailedError as err:
                if err.best is None:
                    self.failures_[name] = str(err)
                    continue
                spec, ll = err.best, err.loglik
            scores = divergence_table(emp, model_histogram(spec, edges))
            scores["loglik"] = ll
            self.table_[name] = scores
            self.specs_[name] = spec
        if not self.table_:
            raise FitFailedError("every candidate family failed: " + "; ".join(
                f"{k}: {v}" for k, v in self.failures_.items()))
        self.best_label_ = min(self.table_, key=lambda k: self.table_[k][self.metric])
        self.best_spec_ = self.specs_[self.best_label_]
        self.edges_ = edges
        return self

    def score_samples(self, X):
        return D.logpdf(self.best_spec_, np.asarray(X, dtype=float))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n, random_state=None):
        return D.sample(self.best_spec_, random_state, size=n)
