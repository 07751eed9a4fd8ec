"""Parametric laws for inter-arrival and service times.

Every family is described by a frozen :class:`DistributionSpec` holding named
parameters.  Parameter names per family:

=====================  ==============================  ==================
family                 params                          tail index
=====================  ==============================  ==================
exponential            rate                            none
gamma                  shape, scale                    none
weibull                shape, scale                    none
lognormal              mu, sigma (of log X)            none
loglogistic            shape, scale                    shape
pareto                 scale (x_m), alpha              alpha
generalized-pareto     shape (xi), scale               1/xi
inverse-gaussian       mean, shape (lambda)            none
mixture2               weight (of first component)     min over parts
=====================  ==============================  ==================

Tails are pure power laws (constant slowly varying factor).  A spec whose tail
index lies in (1, 2) has finite mean but infinite variance and is flagged as
LRD-inducing when used as an M/G/inf service law.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate, special, stats

from ..errors import DivergingIntegralError, ParameterDomainError
from .random import as_generator

FAMILIES = (
    "exponential",
    "gamma",
    "weibull",
    "lognormal",
    "loglogistic",
    "pareto",
    "generalized-pareto",
    "inverse-gaussian",
    "mixture2",
)

PARAM_NAMES = {
    "exponential": ("rate",),
    "gamma": ("shape", "scale"),
    "weibull": ("shape", "scale"),
    "lognormal": ("mu", "sigma"),
    "loglogistic": ("shape", "scale"),
    "pareto": ("scale", "alpha"),
    "generalized-pareto": ("shape", "scale"),
    "inverse-gaussian": ("mean", "shape"),
    "mixture2": ("weight",),
}

_ALIASES = {
    "exp": "exponential",
    "expon": "exponential",
    "log-normal": "lognormal",
    "log-logistic": "loglogistic",
    "fisk": "loglogistic",
    "gpd": "generalized-pareto",
    "genpareto": "generalized-pareto",
    "invgauss": "inverse-gaussian",
    "inverse_gaussian": "inverse-gaussian",
    "generalized_pareto": "generalized-pareto",
    "mixture": "mixture2",
}


def canonical_family(name: str) -> str:
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in PARAM_NAMES:
        raise ParameterDomainError(f"unknown distribution family {name!r}")
    return key


@dataclass(frozen=True)
class DistributionSpec:
    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    components: tuple = ()

    def __post_init__(self):
        fam = canonical_family(self.family)
        object.__setattr__(self, "family", fam)
        names = PARAM_NAMES[fam]
        missing = [n for n in names if n not in self.params]
        extra = [k for k in self.params if k not in names]
        if missing or extra:
            raise ParameterDomainError(
                f"{fam} expects parameters {names}, got {tuple(self.params)}"
            )
        clean = {n: float(self.params[n]) for n in names}
        object.__setattr__(self, "params", clean)
        object.__setattr__(self, "components", tuple(self.components))
        _validate(self)

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items())), self.components))

    def __getitem__(self, name):
        return self.params[name]

    @property
    def tail_index(self):
        """Power-law tail index, or None when the tail is lighter than any power."""
        fam, p = self.family, self.params
        if fam == "pareto":
            return p["alpha"]
        if fam == "generalized-pareto":
            return 1.0 / p["shape"]
        if fam == "loglogistic":
            return p["shape"]
        if fam == "mixture2":
            w = p["weight"]
            # a zero-weight component contributes no tail
            idx = [
                c.tail_index
                for c, wc in zip(self.components, (w, 1 - w))
                if wc > 0 and c.tail_index is not None
            ]
            return min(idx) if idx else None
        return None

    @property
    def lrd(self) -> bool:
        a = self.tail_index
        return a is not None and 1.0 < a < 2.0

    def __str__(self):
        if self.family == "mixture2":
            a, b = self.components
            return f"mixture2(weight={self['weight']:.4g}, {a}, {b})"
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self.params.items())
        return f"{self.family}({inner})"

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        out = {"family": self.family}
        out.update(self.params)
        if self.components:
            out["components"] = [c.to_dict() for c in self.components]
        return out

    @classmethod
    def from_dict(cls, block: Mapping) -> "DistributionSpec":
        block = dict(block)
        if "family" not in block:
            raise ParameterDomainError("distribution block needs a 'family' key")
        fam = canonical_family(block.pop("family"))
        comps = tuple(cls.from_dict(c) for c in block.pop("components", ()))
        return cls(fam, block, comps)


def _validate(spec: DistributionSpec):
    p = spec.params
    for k, v in p.items():
        if not math.isfinite(v):
            raise ParameterDomainError(f"{spec.family}.{k} must be finite, got {v}")
    if spec.family == "mixture2":
        if not 0.0 <= p["weight"] <= 1.0:
            raise ParameterDomainError("mixture weight must lie in [0, 1]")
        if len(spec.components) != 2:
            raise ParameterDomainError("mixture2 needs exactly two components")
        for c in spec.components:
            if not isinstance(c, DistributionSpec) or c.family == "mixture2":
                raise ParameterDomainError("mixture components must be non-mixture specs")
        return
    if spec.components:
        raise ParameterDomainError(f"{spec.family} takes no components")
    for k, v in p.items():
        if k == "mu":
            continue
        if v <= 0:
            raise ParameterDomainError(f"{spec.family}.{k} must be > 0, got {v}")


# factories ---------------------------------------------------------------

def exponential(rate):
    return DistributionSpec("exponential", {"rate": rate})


def gamma(shape, scale):
    return DistributionSpec("gamma", {"shape": shape, "scale": scale})


def weibull(shape, scale):
    return DistributionSpec("weibull", {"shape": shape, "scale": scale})


def lognormal(mu, sigma):
    return DistributionSpec("lognormal", {"mu": mu, "sigma": sigma})


def loglogistic(shape, scale):
    return DistributionSpec("loglogistic", {"shape": shape, "scale": scale})


def pareto(scale, alpha):
    return DistributionSpec("pareto", {"scale": scale, "alpha": alpha})


def generalized_pareto(shape, scale):
    return DistributionSpec("generalized-pareto", {"shape": shape, "scale": scale})


def inverse_gaussian(mean, shape):
    return DistributionSpec("inverse-gaussian", {"mean": mean, "shape": shape})


def mixture2(weight, first, second):
    return DistributionSpec("mixture2", {"weight": weight}, (first, second))


# scipy bridge --------------------------------------------------------------

def frozen(spec: DistributionSpec):
    """scipy frozen distribution for a non-mixture spec."""
    fam, p = spec.family, spec.params
    if fam == "exponential":
        return stats.expon(scale=1.0 / p["rate"])
    if fam == "gamma":
        return stats.gamma(p["shape"], scale=p["scale"])
    if fam == "weibull":
        return stats.weibull_min(p["shape"], scale=p["scale"])
    if fam == "lognormal":
        return stats.lognorm(p["sigma"], scale=math.exp(p["mu"]))
    if fam == "loglogistic":
        return stats.fisk(p["shape"], scale=p["scale"])
    if fam == "pareto":
        return stats.pareto(p["alpha"], scale=p["scale"])
    if fam == "generalized-pareto":
        return stats.genpareto(p["shape"], scale=p["scale"])
    if fam == "inverse-gaussian":
        return stats.invgauss(p["mean"] / p["shape"], scale=p["shape"])
    raise ParameterDomainError("mixtures have no single scipy equivalent")


def logpdf(spec: DistributionSpec, x):
    x = np.asarray(x, dtype=float)
    if spec.family == "mixture2":
        w = spec["weight"]
        a, b = spec.components
        with np.errstate(divide="ignore"):
            la = np.log(w) + logpdf(a, x) if w > 0 else np.full(x.shape, -np.inf)
            lb = np.log1p(-w) + logpdf(b, x) if w < 1 else np.full(x.shape, -np.inf)
        return np.logaddexp(la, lb)
    return frozen(spec).logpdf(x)


def cdf(spec: DistributionSpec, x):
    return 1.0 - survival(spec, x)


def survival(spec: DistributionSpec, s):
    """P(X > s); vectorised over ``s``."""
    s = np.asarray(s, dtype=float)
    if spec.family == "mixture2":
        w = spec["weight"]
        a, b = spec.components
        out = w * survival(a, s) + (1 - w) * survival(b, s)
    elif spec.family == "exponential":
        out = np.exp(-spec["rate"] * np.maximum(s, 0.0))
    elif spec.family == "pareto":
        xm, al = spec["scale"], spec["alpha"]
        with np.errstate(divide="ignore"):
            out = np.where(s <= xm, 1.0, (xm / np.maximum(s, xm)) ** al)
    else:
        with np.errstate(all="ignore"):
            out = frozen(spec).sf(s)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def mean(spec: DistributionSpec) -> float:
    fam, p = spec.family, spec.params
    if fam == "mixture2":
        w = p["weight"]
        a, b = spec.components
        ma = mean(a) if w > 0 else 0.0
        mb = mean(b) if w < 1 else 0.0
        return w * ma + (1 - w) * mb
    if fam == "exponential":
        return 1.0 / p["rate"]
    if fam == "gamma":
        return p["shape"] * p["scale"]
    if fam == "weibull":
        return p["scale"] * math.gamma(1 + 1 / p["shape"])
    if fam == "lognormal":
        return math.exp(p["mu"] + 0.5 * p["sigma"] ** 2)
    if fam == "loglogistic":
        k = p["shape"]
        if k <= 1:
            return math.inf
        return p["scale"] * (math.pi / k) / math.sin(math.pi / k)
    if fam == "pareto":
        al = p["alpha"]
        return math.inf if al <= 1 else al * p["scale"] / (al - 1)
    if fam == "generalized-pareto":
        xi = p["shape"]
        return math.inf if xi >= 1 else p["scale"] / (1 - xi)
    if fam == "inverse-gaussian":
        return p["mean"]
    raise ParameterDomainError(fam)


def variance(spec: DistributionSpec) -> float:
    if spec.family == "mixture2":
        w = spec["weight"]
        a, b = spec.components
        m = mean(spec)
        second = w * (variance(a) + mean(a) ** 2) + (1 - w) * (variance(b) + mean(b) ** 2)
        return second - m * m
    if spec.family == "exponential":
        return spec["rate"] ** -2
    if spec.family == "pareto":
        al, xm = spec["alpha"], spec["scale"]
        if al <= 2:
            return math.inf
        return xm * xm * al / ((al - 1) ** 2 * (al - 2))
    return float(frozen(spec).var())


def tail_integral(spec: DistributionSpec, h: float) -> float:
    """Integral of the survival function over [h, inf).

    Closed form where one exists (the integral equals E[(X - h)^+]); otherwise
    adaptive quadrature with relative tolerance 1e-8.  Raises
    DivergingIntegralError when the mean is infinite.
    """
    h = float(h)
    if h < 0:
        raise ParameterDomainError("tail_integral needs h >= 0")
    m = mean(spec)
    if not math.isfinite(m):
        raise DivergingIntegralError(f"{spec} has infinite mean; the tail integral diverges")
    fam, p = spec.family, spec.params
    if h == 0.0:
        return m
    if fam == "mixture2":
        w = p["weight"]
        a, b = spec.components
        ta = tail_integral(a, h) if w > 0 else 0.0
        tb = tail_integral(b, h) if w < 1 else 0.0
        return w * ta + (1 - w) * tb
    if fam == "exponential":
        return math.exp(-p["rate"] * h) / p["rate"]
    if fam == "pareto":
        xm, al = p["scale"], p["alpha"]
        if h <= xm:
            return m - h
        return xm ** al * h ** (1 - al) / (al - 1)
    if fam == "generalized-pareto":
        xi, sig = p["shape"], p["scale"]
        return sig / (1 - xi) * math.exp((1 - 1 / xi) * math.log1p(xi * h / sig))
    if fam == "loglogistic":
        # substitute v = 1/(1+(s/scale)^k): an incomplete beta integral
        k, sc = p["shape"], p["scale"]
        v0 = 1.0 / (1.0 + (h / sc) ** k)
        return m * special.betainc(1 - 1 / k, 1 / k, v0)
    # partial expectations E[X; X > h] - h P(X > h)
    if fam == "gamma":
        k, th = p["shape"], p["scale"]
        pe = k * th * special.gammaincc(k + 1, h / th)
        return max(pe - h * special.gammaincc(k, h / th), 0.0)
    if fam == "weibull":
        k, lam = p["shape"], p["scale"]
        z = (h / lam) ** k
        pe = lam * math.gamma(1 + 1 / k) * special.gammaincc(1 + 1 / k, z)
        return max(pe - h * math.exp(-z), 0.0)
    if fam == "lognormal":
        mu, sg = p["mu"], p["sigma"]
        lh = math.log(h)
        pe = m * special.ndtr((mu + sg * sg - lh) / sg)
        return max(pe - h * special.ndtr((mu - lh) / sg), 0.0)
    return _quad_tail(spec, h)


def _quad_tail(spec, h):
    dist = frozen(spec)
    f = lambda s: survival(spec, s)
    # break the half line at a few upper quantiles so quad sees the bulk
    qs = [float(dist.isf(q)) for q in (0.5, 1e-2, 1e-4, 1e-6)]
    pts = [h] + sorted(q for q in qs if q > h)
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(pts[:-1], pts[1:]):
            val, _ = integrate.quad(f, lo, hi, epsrel=1e-10, epsabs=0, limit=200)
            total += val
        # the far tail carries < 1e-6 of the mass; an absolute floor keeps quad quiet
        val, _ = integrate.quad(f, pts[-1], np.inf, epsrel=1e-8, epsabs=1e-13 * mean(spec), limit=400)
    return total + val


# sampling ----------------------------------------------------------------

def sample(spec: DistributionSpec, rng=None, size=None):
    """Draw from ``spec``.  Returns a float when ``size`` is None."""
    gen = as_generator(rng)
    n = 1 if size is None else size
    out = _sample(spec, gen, n)
    return float(out[0]) if size is None else out


def _sample(spec, gen, n):
    fam, p = spec.family, spec.params
    if fam == "mixture2":
        first = gen.random(n) < p["weight"]
        out = np.empty(n)
        k = int(first.sum())
        out[first] = _sample(spec.components[0], gen, k)
        out[~first] = _sample(spec.components[1], gen, n - k)
        return out
    if fam == "exponential":
        return gen.exponential(1.0 / p["rate"], n)
    if fam == "gamma":
        return gen.gamma(p["shape"], p["scale"], n)
    if fam == "weibull":
        return p["scale"] * gen.weibull(p["shape"], n)
    if fam == "lognormal":
        return gen.lognormal(p["mu"], p["sigma"], n)
    if fam == "pareto":
        # inverse transform; 1 - U keeps the draw away from U = 0
        return p["scale"] * (1.0 - gen.random(n)) ** (-1.0 / p["alpha"])
    if fam == "loglogistic":
        u = gen.random(n)
        return p["scale"] * (u / (1.0 - u)) ** (1.0 / p["shape"])
    if fam == "generalized-pareto":
        xi = p["shape"]
        e = -np.log1p(-gen.random(n))  # standard exponential
        if abs(xi) < 1e-12:
            return p["scale"] * e
        # expm1 keeps precision when xi is close to zero
        return p["scale"] / xi * np.expm1(xi * e)
    if fam == "inverse-gaussian":
        return gen.wald(p["mean"], p["shape"], n)
    raise ParameterDomainError(fam)


def sample_residual(spec: DistributionSpec, rng=None, size=1):
    """Draw from the equilibrium (stationary-excess) law, density S(x)/E[X].

    Used to start an M/G/inf system in steady state: jobs present at time 0
    have residual lifetimes with this law.
    """
    gen = as_generator(rng)
    m = mean(spec)
    if not math.isfinite(m):
        raise DivergingIntegralError("equilibrium law needs a finite mean")
    if spec.family == "exponential":
        return gen.exponential(m, size)
    if spec.family == "pareto":
        xm, al = spec["scale"], spec["alpha"]
        body = gen.random(size) < (al - 1) / al
        out = np.empty(size)
        nb = int(body.sum())
        out[body] = xm * gen.random(nb)
        out[~body] = xm * (1.0 - gen.random(size - nb)) ** (-1.0 / (al - 1))
        return out
    grid, tail = _residual_table(spec)
    # P(R > x) = tail_integral(x) / mean, tabulated and inverted linearly
    u = gen.random(size)
    return np.interp(u, tail[::-1], grid[::-1])


_RESIDUAL_CACHE: dict = {}


def _residual_table(spec, npts=2000):
    hit = _RESIDUAL_CACHE.get(spec)
    if hit is not None:
        return hit
    m = mean(spec)
    hi = m
    while tail_integral(spec, hi) / m > 1e-7 and hi < 1e12 * m:
        hi *= 4
    grid = np.concatenate([[0.0], np.geomspace(m * 1e-6, hi, npts)])
    # integrate the survival function backwards from hi on a fine grid
    fine = np.concatenate([[0.0], np.geomspace(m * 1e-7, hi, 40 * npts)])
    sf = np.asarray(survival(spec, fine))
    seg = 0.5 * (sf[1:] + sf[:-1]) * np.diff(fine)
    back = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + tail_integral(spec, hi)
    tail = np.interp(grid, fine, back) / back[0]
    tail = np.minimum.accumulate(np.clip(tail, 0, 1))
    tail[0] = 1.0
    _RESIDUAL_CACHE[spec] = (grid, tail)
    return grid, tail
