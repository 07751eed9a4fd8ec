"""Steady-state and covariance analytics.

The coupled surface model is a birth-death chain on N >= 0 with birth rate
``lam`` and death rate ``d(n) = mu_d * 1{n > 0} + kappa * n`` where
``kappa = beta * lam_ref``.  Its stationary law follows from detailed balance,
computed in log space so large surfaces do not overflow.

The covariance helpers cover the M/G/inf occupancy process, whose lag-h
autocovariance is ``lam * integral_h^inf (1 - F(s)) ds``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ParameterDomainError, TruncationError, WindowError
from .stochastics import distributions as D

MAX_STATES = 10_000_000


@dataclass
class StationaryPMF:
    probs: np.ndarray
    tail_bound: float = 0.0

    @property
    def n_trunc(self) -> int:
        return self.probs.size - 1

    @property
    def support(self):
        return np.arange(self.probs.size)

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot((self.support - m) ** 2, self.probs))

    def quantile(self, q: float) -> int:
        return int(np.searchsorted(np.cumsum(self.probs), q))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "probability"])
        for n, p in enumerate(self.probs):
            w.writerow([n, repr(float(p))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def stationary_distribution(lam, mu_d, beta, lam_ref=None, tol=1e-12, max_states=MAX_STATES) -> StationaryPMF:
    """Stationary law of the birth-death chain, truncated once the tail is < tol.

    ``lam_ref`` defaults to ``lam``.  The state space grows geometrically until
    the remaining mass is certifiably below ``tol``; the certificate uses the
    fact that past the mode the ratio pi(n+1)/pi(n) is nonincreasing, so the
    tail is dominated by a geometric series.
    """
    lam_ref = lam if lam_ref is None else lam_ref
    if min(lam, mu_d, beta, lam_ref) < 0:
        raise ParameterDomainError("rates must be nonnegative")
    kappa = beta * lam_ref
    if lam == 0:
        return StationaryPMF(np.array([1.0]))
    if mu_d == 0 and kappa == 0:
        raise TruncationError("no departures: the surface grows without bound")
    if kappa == 0 and mu_d <= lam:
        raise TruncationError(f"unstable: defense rate {mu_d:g} <= arrival rate {lam:g} with no exploits")

    size = 1024
    while True:
        n = np.arange(1, size)
        death = mu_d + kappa * n
        logp = np.concatenate([[0.0], np.cumsum(np.log(lam) - np.log(death))])
        # ratio r(n) = lam / d(n+1) at the last state bounds the remaining tail
        r = lam / (mu_d + kappa * size)
        if r < 1:
            top = logp.max()
            p = np.exp(logp - top)
            z = p.sum()
            tail = p[-1] * r / (1 - r) / z
            if tail < tol:
                p /= z + p[-1] * r / (1 - r)
                p /= p.sum()
                return StationaryPMF(p, tail)
        if size >= max_states:
            raise TruncationError(f"tail mass above {tol:g} after {max_states} states")
        size = min(size * 4, max_states)


def breach_and_defense_rates(pmf: StationaryPMF, lam, mu_d, beta, lam_ref=None):
    """(breach, defense) long-run rates; they sum to ``lam`` by construction."""
    lam_ref = lam if lam_ref is None else lam_ref
    breach = beta * lam_ref * pmf.mean()
    breach = min(max(breach, 0.0), lam)
    return breach, lam - breach


def realized_defense_rate(pmf: StationaryPMF, mu_d) -> float:
    """mu_d * P(N > 0); equals ``lam - breach`` up to truncation error."""
    return float(mu_d * (1.0 - pmf.probs[0]))


def surface_pmf(cfg) -> StationaryPMF:
    """Stationary law for a static-defense :class:`SurfaceConfig`."""
    mu_d = min(cfg.static_defense_rate, cfg.budget)
    return stationary_distribution(cfg.lam, mu_d, cfg.kappa, 1.0)


# -- covariance ---------------------------------------------------------------

@dataclass
class CovarianceCurve:
    lags: np.ndarray
    values: np.ndarray
    provenance: str = "analytic"

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lag", "covariance", "provenance"])
        for h, v in zip(self.lags, self.values):
            w.writerow([_num(h), repr(float(v)), self.provenance])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _num(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def analytic_autocovariance(lam, service: D.DistributionSpec, h):
    """lam * integral_h^inf (1 - F(s)) ds; vectorised over ``h``."""
    h_arr = np.atleast_1d(np.asarray(h, dtype=float))
    vals = np.array([lam * D.tail_integral(service, x) for x in h_arr])
    return float(vals[0]) if np.ndim(h) == 0 else vals


def analytic_curve(lam, service, lags) -> CovarianceCurve:
    lags = np.asarray(lags, dtype=float)
    return CovarianceCurve(lags, analytic_autocovariance(lam, service, lags), "analytic")


def empirical_autocovariance(series, max_lag: int) -> CovarianceCurve:
    """Biased (divide-by-n) autocovariance at lags 0..max_lag, via FFT."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag < 0 or n < 10 * max(max_lag, 1):
        raise InsufficientDataError(f"series of length {n} too short for max_lag={max_lag}")
    y = x - x.mean()
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    if np.ptp(x) == 0:
        acov = np.zeros(max_lag + 1)
    return CovarianceCurve(np.arange(max_lag + 1, dtype=float), acov, "empirical")


def average_curves(curves) -> CovarianceCurve:
    curves = list(curves)
    vals = np.mean([c.values for c in curves], axis=0)
    return CovarianceCurve(curves[0].lags, vals, curves[0].provenance)


def tail_exponent_estimate(curve: CovarianceCurve, lag_window=(10, 100)) -> float:
    """Least-squares slope of log Cov against log h inside ``lag_window``."""
    lo, hi = lag_window
    sel = (curve.lags >= lo) & (curve.lags <= hi)
    if sel.sum() < 2:
        raise WindowError(f"fewer than two lags inside window {lag_window}")
    v = curve.values[sel]
    if np.any(v <= 0):
        bad = curve.lags[sel][v <= 0][0]
        raise WindowError(f"nonpositive covariance at lag {bad:g}; try h_hi < {bad:g}")
    slope, _ = np.polyfit(np.log(curve.lags[sel]), np.log(v), 1)
    return float(slope)


def local_slopes(curve: CovarianceCurve) -> np.ndarray:
    """d log Cov / d log h between consecutive positive lags (NaN elsewhere)."""
    h, v = curve.lags, curve.values
    out = np.full(h.size - 1, np.nan)
    ok = (h[:-1] > 0) & (v[:-1] > 0) & (v[1:] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[ok] = np.diff(np.log(v))[ok] / np.diff(np.log(np.where(h > 0, h, 1.0)))[ok]
    return out


def lrd_verdict(curve: CovarianceCurve, lag_window=(10, 100), steep=-2.0) -> dict:
    """Slope report; LRD-negative when the local slope at the window end is below ``steep``."""
    lo, hi = lag_window
    sel = (curve.lags >= lo) & (curve.lags <= hi)
    sub = CovarianceCurve(curve.lags[sel], curve.values[sel], curve.provenance)
    loc = local_slopes(sub)
    finite = loc[np.isfinite(loc)]
    end_slope = float(finite[-1]) if finite.size else float("nan")
    try:
        slope = tail_exponent_estimate(curve, lag_window)
    except WindowError:
        slope = float("nan")
    return {
        "slope": slope,
        "end_local_slope": end_slope,
        "lrd": bool(np.isfinite(end_slope) and end_slope >= steep and slope > -1.0),
    }
