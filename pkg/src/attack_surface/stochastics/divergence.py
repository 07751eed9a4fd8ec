"""Histograms and the five divergence metrics used to compare them.

A histogram either lives on point support (e.g. queue lengths 0, 1, 2, ...)
or on bin edges (continuous samples such as service times).  Two histograms
are put on a common partition before comparison: point supports by union,
edge supports by merging the edges and splitting mass uniformly within bins.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from ..errors import EmptyInputError, ParameterDomainError

METRICS = ("KL", "TVD", "L2", "JSD", "W1")
KL_EPS = 1e-9


class Histogram:
    """Normalized mass over point support or over bins.

    ``kind='points'``: ``support`` holds the atoms (len == len(mass)).
    ``kind='edges'``: ``support`` holds bin edges (len == len(mass) + 1).
    """

    def __init__(self, support, mass, kind="points"):
        support = np.asarray(support, dtype=float)
        mass = np.asarray(mass, dtype=float)
        if kind not in ("points", "edges"):
            raise ParameterDomainError("kind must be 'points' or 'edges'")
        if mass.size == 0:
            raise EmptyInputError("histogram has no bins")
        expected = mass.size + (kind == "edges")
        if support.size != expected:
            raise ParameterDomainError(
                f"{kind} histogram with {mass.size} masses needs {expected} support values"
            )
        if np.any(np.diff(support) <= 0):
            raise ParameterDomainError("histogram support must be strictly increasing")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ParameterDomainError("histogram masses must be finite and nonnegative")
        total = mass.sum()
        if total <= 0:
            raise EmptyInputError("histogram has zero total mass")
        self.support = support
        self.mass = mass / total
        self.kind = kind

    # constructors ------------------------------------------------------
    @classmethod
    def from_counts(cls, values, weights=None):
        """Point histogram of (integer or discrete) observations."""
        values = np.asarray(values)
        if values.size == 0:
            raise EmptyInputError("no observations")
        atoms, inv = np.unique(values, return_inverse=True)
        mass = np.bincount(inv.ravel(), weights=None if weights is None else np.ravel(weights))
        return cls(atoms, mass, "points")

    @classmethod
    def from_samples(cls, values, edges):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise EmptyInputError("no observations")
        edges = np.asarray(edges, dtype=float)
        counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
        return cls(edges, counts, "edges")

    @classmethod
    def from_pmf(cls, pmf, start=0):
        pmf = np.asarray(pmf, dtype=float)
        return cls(np.arange(start, start + pmf.size), pmf, "points")

    # views ---------------------------------------------------------------
    @property
    def centers(self):
        if self.kind == "points":
            return self.support
        return 0.5 * (self.support[:-1] + self.support[1:])

    def mean(self):
        return float(np.dot(self.centers, self.mass))

    def cdf(self):
        return np.cumsum(self.mass)

    def __len__(self):
        return self.mass.size

    def __repr__(self):
        return f"Histogram(kind={self.kind!r}, bins={self.mass.size}, mean={self.mean():.4g})"

    def to_csv(self, path=None):
        """Two-column CSV ``value,mass`` (bin centers for edge histograms)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "mass"])
        for v, m in zip(self.centers, self.mass):
            w.writerow([_fmt(v), _fmt(m)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def read_csv(cls, path):
        vals, mass = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                vals.append(float(row["value"]))
                mass.append(float(row["mass"]))
        return cls(vals, mass, "points")


def _fmt(x):
    return repr(float(x))


def align(p: Histogram, q: Histogram):
    """Return (support, p_mass, q_mass, kind) on a common partition."""
    if p.kind != q.kind:
        raise ParameterDomainError("cannot compare a point histogram with a binned one")
    if p.kind == "points":
        atoms = np.union1d(p.support, q.support)
        pm = np.zeros(atoms.size)
        qm = np.zeros(atoms.size)
        pm[np.searchsorted(atoms, p.support)] = p.mass
        qm[np.searchsorted(atoms, q.support)] = q.mass
        return atoms, pm, qm, "points"
    if p.support.size == q.support.size and np.array_equal(p.support, q.support):
        return p.support, p.mass, q.mass, "edges"
    edges = np.union1d(p.support, q.support)
    return edges, _rebin(p, edges), _rebin(q, edges), "edges"


def _rebin(h, edges):
    # cumulative mass is piecewise linear inside each original bin
    cum = np.concatenate([[0.0], np.cumsum(h.mass)])
    c = np.interp(edges, h.support, cum, left=0.0, right=1.0)
    return np.diff(c)


def divergence(p: Histogram, q: Histogram, metric: str = "KL") -> float:
    metric = metric.upper()
    if metric == "WASSERSTEIN":
        metric = "W1"
    if metric not in METRICS:
        raise ParameterDomainError(f"unknown metric {metric!r}; choose from {METRICS}")
    support, pm, qm, kind = align(p, q)
    if metric == "KL":
        return kl(pm, qm)
    if metric == "TVD":
        return float(0.5 * np.abs(pm - qm).sum())
    if metric == "L2":
        return float(np.sqrt(np.sum((pm - qm) ** 2)))
    if metric == "JSD":
        return min(max(0.5 * _kl_mid(pm, qm) + 0.5 * _kl_mid(qm, pm), 0.0), np.log(2.0))
    return _w1(support, pm, qm, kind)


def divergence_table(p: Histogram, q: Histogram) -> dict:
    return {m: divergence(p, q, m) for m in METRICS}


def kl(p, q, eps=KL_EPS) -> float:
    """KL(p || q) in nats after add-eps smoothing and renormalization."""
    p = np.asarray(p, dtype=float) + eps
    q = np.asarray(q, dtype=float) + eps
    p /= p.sum()
    q /= q.sum()
    return max(float(np.sum(p * np.log(p / q))), 0.0)


def _kl_mid(p, q):
    # KL(p || (p+q)/2) written so subnormal masses cannot divide by zero
    nz = p > 0
    lp = np.log(p[nz])
    with np.errstate(divide="ignore"):
        lq = np.log(q[nz])
    return float(np.sum(p[nz] * (np.log(2.0) + lp - np.logaddexp(lp, lq))))


def _w1(support, pm, qm, kind):
    d = np.cumsum(pm) - np.cumsum(qm)
    if kind == "points":
        return float(np.sum(np.abs(d[:-1]) * np.diff(support)))
    # CDF difference is linear within a bin; integrate |.| exactly
    d0 = np.concatenate([[0.0], d[:-1]])
    d1 = d
    width = np.diff(support)
    same = d0 * d1 >= 0
    a0, a1 = np.abs(d0), np.abs(d1)
    denom = np.where(same, 1.0, a0 + a1)
    area = np.where(same, 0.5 * (a0 + a1), 0.5 * (d0 ** 2 + d1 ** 2) / denom)
    return float(np.sum(width * area))
