"""Quasi-stationary segmentation of an open-count series.

A univariate Gaussian mixture is fitted to the N values for each candidate K.
The mixture is discretised onto the integers and compared with the empirical
queue-length distribution by KL; the elbow of that curve picks K.  Bins are
labelled by their most responsible component and the labels are turned into
contiguous segments:

1. runs shorter than ``l_min`` bins are absorbed by their longer neighbour,
   shortest first;
2. neighbouring segments whose open-count distributions are close (standardised
   mean difference below ``merge_distance``) are joined, closest pair first.

The number of segments left is the regime count K used downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from ..errors import InsufficientDataError, SegmentationError
from ..stochastics.divergence import kl

MIN_BINS = 50


@dataclass
class Segmentation:
    k_elbow: int
    elbow: Dict[int, float]  # K -> best-of-restarts KL
    labels: np.ndarray  # per-bin component label after smoothing
    intervals: List[Tuple[int, int]]  # closed bin ranges

    @property
    def k(self) -> int:
        return len(self.intervals)

    def segment_of(self, k_bin: int) -> int:
        for i, (a, b) in enumerate(self.intervals):
            if a <= k_bin <= b:
                return i
        raise IndexError(k_bin)


def empirical_qld(values, size=None) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    pmf = np.bincount(v, minlength=size or 0).astype(float)
    return pmf / pmf.sum()


def mixture_pmf(gm: GaussianMixture, size: int) -> np.ndarray:
    """Mass of the mixture on 0..size-1, tails folded into the end points."""
    mu = gm.means_.ravel()
    sd = np.sqrt(gm.covariances_.ravel())
    w = gm.weights_
    edges = np.arange(size + 1) - 0.5
    cdf = ndtr((edges[:, None] - mu[None, :]) / sd[None, :]) @ w
    cdf[0], cdf[-1] = 0.0, 1.0
    return np.diff(cdf)


def fit_mixtures(values, k_range, restarts=5, max_restarts=20, random_state=0, reg_covar=1.0 / 12):
    """Best-of-restarts mixture per K.  Returns {K: (model, KL)}."""
    x = np.asarray(values, dtype=float).reshape(-1, 1)
    size = int(x.max()) + 1
    emp = empirical_qld(values, size)
    out = {}
    for K in k_range:
        best, best_kl, attempts = None, np.inf, 0
        while attempts < max_restarts and (attempts < restarts or best is None):
            gm = GaussianMixture(K, reg_covar=reg_covar, random_state=random_state + 1000 * K + attempts,
                                 max_iter=500, tol=1e-4)
            attempts += 1
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                gm.fit(x)
            if not gm.converged_:
                continue
            d = kl(emp, mixture_pmf(gm, size))
            if d < best_kl:
                best, best_kl = gm, d
        if best is None:
            raise SegmentationError(f"EM did not converge for K={K} after {max_restarts} restarts")
        out[K] = (best, best_kl)
    return out


def elbow_k(curve: Dict[int, float], rel_tol=0.05, abs_tol=0.01) -> int:
    """Smallest K after which adding a component stops paying.

    Adding component K+1 pays when it cuts KL by at least ``rel_tol`` of the
    current value and by at least ``abs_tol`` nats.  The curve is replaced by
    its running minimum first, so EM noise cannot make it increase.
    """
    ks = sorted(curve)
    vals = np.minimum.accumulate([curve[k] for k in ks])
    for i, k in enumerate(ks[:-1]):
        gain = vals[i] - vals[i + 1]
        if gain < rel_tol * vals[i] or gain < abs_tol:
            return k
    return ks[-1]


def _runs(labels):
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.size]])
    return starts, ends, labels[starts]


def merge_short_runs(labels, l_min: int) -> np.ndarray:
    """Absorb runs shorter than ``l_min`` into their longer neighbour, shortest first."""
    lab = np.asarray(labels).copy()
    while True:
        starts, ends, vals = _runs(lab)
        if starts.size == 1:
            return lab
        lengths = ends - starts
        i = int(np.argmin(lengths))
        if lengths[i] >= l_min:
            return lab
        if i == 0:
            j = 1
        elif i == starts.size - 1:
            j = i - 1
        else:
            j = i - 1 if lengths[i - 1] >= lengths[i + 1] else i + 1
        lab[starts[i]:ends[i]] = vals[j]


def merge_similar(values, intervals, merge_distance=1.0):
    """Join adjacent segments whose N distributions differ by < merge_distance pooled SDs."""
    values = np.asarray(values, dtype=float)
    segs = list(intervals)
    while len(segs) > 1:
        best, best_d = None, np.inf
        for i in range(len(segs) - 1):
            a = values[segs[i][0]: segs[i][1] + 1]
            b = values[segs[i + 1][0]: segs[i + 1][1] + 1]
            pooled = np.sqrt(0.5 * (a.var() + b.var()) + 1.0 / 12)
            d = abs(a.mean() - b.mean()) / pooled
            if d < best_d:
                best, best_d = i, d
        if best_d >= merge_distance:
            break
        segs[best] = (segs[best][0], segs[best + 1][1])
        del segs[best + 1]
    return segs


def segment_qld(series, k_range=range(1, 11), l_min_frac=0.02, rel_tol=0.05, abs_tol=0.01,
                merge_distance=1.0, restarts=5, random_state=0, min_bins=1) -> Segmentation:
    values = np.asarray(getattr(series, "N", series), dtype=np.int64)
    n = values.size
    if n < MIN_BINS:
        raise InsufficientDataError(f"segmentation needs >= {MIN_BINS} bins, got {n}")
    k_range = [k for k in k_range if k >= 1]
    fits = fit_mixtures(values, k_range, restarts=restarts, random_state=random_state)
    curve = {k: fits[k][1] for k in k_range}
    k_star = elbow_k(curve, rel_tol, abs_tol)
    gm = fits[k_star][0]
    # order components by mean so labels are comparable across runs
    order = np.argsort(gm.means_.ravel())
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    labels = rank[gm.predict(values.reshape(-1, 1).astype(float))]
    l_min = max(int(round(l_min_frac * n)), int(min_bins), 1)
    labels = merge_short_runs(labels, l_min)
    starts, ends, _ = _runs(labels)
    intervals = [(int(a), int(b) - 1) for a, b in zip(starts, ends)]
    intervals = merge_similar(values, intervals, merge_distance)
    for i, (a, b) in enumerate(intervals):
        labels[a: b + 1] = i
    return Segmentation(k_star, curve, labels, intervals)


class QLDSegmenter(BaseEstimator):
    """Estimator wrapper around :func:`segment_qld`.

    ``fit(N)`` stores ``segmentation_``; ``predict`` returns per-bin segment ids
    of the fitted series.
    """

    def __init__(self, k_max=10, l_min_frac=0.02, rel_tol=0.05, abs_tol=0.01,
                 merge_distance=1.0, restarts=5, random_state=0):
        self.k_max = k_max
        self.l_min_frac = l_min_frac
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.merge_distance = merge_distance
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y=None):
        self.segmentation_ = segment_qld(
            X, range(1, self.k_max + 1), self.l_min_frac, self.rel_tol, self.abs_tol,
            self.merge_distance, self.restarts, self.random_state)
        self.n_segments_ = self.segmentation_.k
        return self

    def predict(self, X=None):
        return self.segmentation_.labels.copy()
