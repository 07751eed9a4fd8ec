"""Synthetic event traces with known regimes, for pipeline recovery checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

from ..queue import ggmb_jobs
from ..stochastics import distributions as D
from ..stochastics.random import as_stream
from .events import VulnEvent


@dataclass
class Regime:
    interarrival: D.DistributionSpec
    service: D.DistributionSpec
    servers: int = None
    budget: float = math.inf


@dataclass
class SyntheticTrace:
    events: List[VulnEvent]
    regimes: Sequence[Regime]
    boundaries: List[int]  # first bin of each regime
    bin_width: float
    n_bins: int


def regime_trace(regimes: Sequence[Regime], lengths: Sequence[int], bin_width=1.0, rng=0) -> SyntheticTrace:
    """Concatenate regimes; regime r owns arrivals inside its bins.

    Each regime is served by its own G/G/m-b pool, which keeps serving its
    backlog after the regime ends.  Jobs unfinished at the horizon stay open.
    """
    stream = as_stream(rng)
    total = int(sum(lengths))
    t_end = total * bin_width
    events, bounds = [], []
    start = 0
    for r, (reg, n) in enumerate(zip(regimes, lengths)):
        bounds.append(start)
        lo, hi = start * bin_width, (start + n) * bin_width
        budget = 1e12 if math.isinf(reg.budget) else reg.budget
        arr, dep = ggmb_jobs(reg.interarrival, reg.service, reg.servers, budget,
                             t_end, stream.child(r), t_start=lo, arrivals_until=hi)
        for i, (a, d) in enumerate(zip(arr, dep)):
            events.append(VulnEvent(f"r{r}-{i:06d}", float(a),
                                    None if (math.isnan(d) or d > t_end) else float(d)))
        start += n
    events.sort(key=lambda e: (e.discovered_at, e.id))
    return SyntheticTrace(events, list(regimes), bounds, bin_width, total)


def two_regime_trace(n_bins=10_000, bin_width=1.0, rng=0) -> SyntheticTrace:
    """Light-tailed first half (open count near 10), heavy-tailed second half (near 40).

    First half: Poisson arrivals at rate 2, exponential service with mean 5,
    unlimited servers.  Second half: Poisson arrivals at rate 2, pareto
    service with tail index 1.7 and mean 20.  The open-count means sit about
    six pooled standard deviations apart.
    """
    alpha = 1.7
    xm = 20.0 * (alpha - 1) / alpha
    regimes = [
        Regime(D.exponential(2.0 / bin_width), D.exponential(0.2 / bin_width)),
        Regime(D.exponential(2.0 / bin_width), D.pareto(xm * bin_width, alpha)),
    ]
    half = n_bins // 2
    return regime_trace(regimes, [half, n_bins - half], bin_width, rng)


def stationary_trace(n_bins=10_000, bin_width=1.0, rng=0, lam=0.5, mu=1.0) -> SyntheticTrace:
    """Single M/M/1 regime."""
    reg = Regime(D.exponential(lam / bin_width), D.exponential(mu / bin_width), servers=1)
    return regime_trace([reg], [n_bins], bin_width, rng)
