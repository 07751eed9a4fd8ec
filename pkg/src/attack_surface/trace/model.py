"""Per-segment queue models fitted to an event trace, and their validation.

For each segment: inter-arrival samples are the gaps between consecutive
discoveries inside it, service samples are patch delays of events discovered
inside it (open events are censored and left out).  Each is fitted with
every candidate family and the KL-best one is kept.  Then (m, b) is chosen on
a grid by simulating the G/G/m-b queue with the fitted laws and scoring the
simulated queue-length distribution against the segment's.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import ConfigError, InsufficientDataError
from ..queue import simulate_ggmb
from ..stochastics import distributions as D
from ..stochastics.divergence import kl
from ..stochastics.fitting import DEFAULT_CANDIDATES, DistributionFitter
from ..stochastics.random import RandomStream, as_stream
from .events import QueueSeries, reconstruct_queue
from .segmentation import empirical_qld, segment_qld

MIN_SEGMENT_BINS = 30
MIN_ARRIVALS = 10


@dataclass
class SegmentModel:
    interval: Tuple[int, int]
    ia: D.DistributionSpec
    st: D.DistributionSpec
    ia_table: Dict[str, dict]
    st_table: Dict[str, dict]
    m: int
    b: float
    kl: float
    n_ia: int = 0
    n_st: int = 0
    grid: Dict[Tuple[int, float], float] = field(default_factory=dict, repr=False)

    @property
    def length(self):
        return self.interval[1] - self.interval[0] + 1

    def report(self) -> dict:
        return {
            "interval": list(self.interval),
            "F_IA": self.ia.to_dict(),
            "F_ST": self.st.to_dict(),
            "divergence_IA": self.ia_table,
            "divergence_ST": self.st_table,
            "m": int(self.m),
            "b": float(self.b),
            "qld_kl": float(self.kl),
            "n_interarrivals": self.n_ia,
            "n_service_times": self.n_st,
        }


@dataclass
class SegmentedFit:
    segments: List[SegmentModel]
    elbow: Dict[int, float]
    k_elbow: int
    model_kl: Optional[float] = None
    bootstrap_kl: Optional[float] = None

    @property
    def K(self):
        return len(self.segments)

    def report(self) -> dict:
        return {
            "K": self.K,
            "k_elbow": self.k_elbow,
            "elbow": {int(k): float(v) for k, v in self.elbow.items()},
            "model_kl": self.model_kl,
            "bootstrap_kl": self.bootstrap_kl,
            "segments": [s.report() for s in self.segments],
        }

    def elbow_csv(self, path=None):
        rows = [["K", "kl"]] + [[k, repr(float(v))] for k, v in sorted(self.elbow.items())]
        return _write_rows(rows, path)


def _write_rows(rows, path=None):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def segment_samples(series: QueueSeries, interval):
    """(inter-arrival gaps, service times) for events discovered in ``interval``."""
    disc, pat = series.window(*interval)
    disc = np.sort(disc)
    gaps = np.diff(disc)
    gaps = gaps[gaps > 0]
    st = pat - series.window(*interval)[0]
    st = st[~np.isnan(st)]
    st = st[st > 0]
    return gaps, st


def _best_fit(samples, candidates, random_state):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f = DistributionFitter(candidates=candidates, random_state=random_state).fit(samples)
    return f.best_spec_, f.table_


def default_grids(segment_N, arrival_rate, patch_rate, n_m=8, n_b=8):
    n_hi = max(int(np.max(segment_N)), 1)
    m_grid = sorted(set(int(round(x)) for x in np.geomspace(1, max(2 * n_hi, 2), n_m)))
    base = max(patch_rate, arrival_rate, 1e-9)
    b_grid = list(base * np.geomspace(0.75, 8.0, n_b))
    return m_grid, b_grid


def simulated_qld(ia, st, m, b, n_bins, bin_width, rng, size=None):
    warm = max(50 * bin_width, 20 * D.mean(st))
    occ = simulate_ggmb(ia, st, m, b, n_bins, bin_width, rng=rng, warmup=warm)
    return occ


def fit_segment(series: QueueSeries, interval, candidates=DEFAULT_CANDIDATES, sim_budget=10_000,
                m_grid=None, b_grid=None, rng=0, random_state=0) -> SegmentModel:
    if not candidates:
        raise ConfigError("candidate list is empty")
    a, b_end = interval
    if b_end - a + 1 < MIN_SEGMENT_BINS:
        raise InsufficientDataError(f"segment {interval} shorter than {MIN_SEGMENT_BINS} bins")
    gaps, st = segment_samples(series, interval)
    if gaps.size + 1 < MIN_ARRIVALS or st.size < MIN_ARRIVALS:
        raise InsufficientDataError(
            f"segment {interval}: {gaps.size + 1} arrivals, {st.size} completed services")
    ia_spec, ia_table = _best_fit(gaps, candidates, random_state)
    st_spec, st_table = _best_fit(st, candidates, random_state)

    seg_N = series.N[a: b_end + 1]
    duration = (b_end - a + 1) * series.bin_width
    arr_rate = series.arrivals[a: b_end + 1].sum() / duration
    pat_rate = series.patches[a: b_end + 1].sum() / duration
    dm, db = default_grids(seg_N, arr_rate, pat_rate)
    m_grid = dm if m_grid is None else list(m_grid)
    b_grid = db if b_grid is None else list(b_grid)

    emp = empirical_qld(seg_N)
    stream = as_stream(rng)
    grid = {}
    best = (None, None, math.inf)
    for m in m_grid:
        for b in b_grid:
            # common random numbers across cells
            occ = simulated_qld(ia_spec, st_spec, m, b, sim_budget, series.bin_width,
                                stream.child("calibration"))
            size = max(emp.size, int(occ.max()) + 1)
            score = kl(np.pad(emp, (0, size - emp.size)), empirical_qld(occ, size))
            grid[(int(m), float(b))] = score
            if score < best[2]:
                best = (int(m), float(b), score)
    return SegmentModel((int(a), int(b_end)), ia_spec, st_spec, ia_table, st_table,
                        best[0], best[1], best[2], gaps.size, st.size, grid)


def validate_model(fit: SegmentedFit, series: QueueSeries, sim_budget=10_000, rng=0):
    """(model KL, bootstrap KL) against the whole-series empirical QLD."""
    stream = as_stream(rng)
    N = np.asarray(series.N, dtype=np.int64)
    n = N.size
    sims = []
    for i, seg in enumerate(fit.segments):
        occ = simulated_qld(seg.ia, seg.st, seg.m, seg.b, max(sim_budget, seg.length),
                            series.bin_width, stream.child(("validate", i).__repr__()))
        sims.append((seg.length / n, occ))
    size = max(int(N.max()), max(int(o.max()) for _, o in sims)) + 1
    model = sum(w * empirical_qld(o, size) for w, o in sims)
    emp = empirical_qld(N, size)
    model_kl = kl(emp, model)
    boot = stream.child("bootstrap").generator.choice(N, size=n, replace=True)
    boot_kl = kl(emp, empirical_qld(boot, size))
    fit.model_kl, fit.bootstrap_kl = float(model_kl), float(boot_kl)
    return fit.model_kl, fit.bootstrap_kl


class SegmentedQueueModel(BaseEstimator):
    """End-to-end trace model: reconstruct, segment, fit, calibrate, validate.

    ``fit`` accepts a list of :class:`VulnEvent` or a ready :class:`QueueSeries`.
    Fitted attributes: ``series_``, ``segmentation_``, ``fit_`` (a
    :class:`SegmentedFit`), ``segments_``.
    """

    def __init__(self, bin_width=1.0, k_max=10, candidates=DEFAULT_CANDIDATES, sim_budget=10_000,
                 l_min_frac=0.02, merge_distance=1.0, validate=True, random_state=0):
        self.bin_width = bin_width
        self.k_max = k_max
        self.candidates = candidates
        self.sim_budget = sim_budget
        self.l_min_frac = l_min_frac
        self.merge_distance = merge_distance
        self.validate = validate
        self.random_state = random_state

    def fit(self, X, y=None):
        series = X if isinstance(X, QueueSeries) else reconstruct_queue(list(X), self.bin_width)
        if len(series) == 0:
            raise InsufficientDataError("trace produced an empty series")
        root = RandomStream(self.random_state)
        seg = segment_qld(series, range(1, self.k_max + 1), l_min_frac=self.l_min_frac,
                          merge_distance=self.merge_distance, random_state=self.random_state,
                          min_bins=MIN_SEGMENT_BINS)
        models = []
        for i, interval in enumerate(seg.intervals):
            models.append(fit_segment(series, interval, self.candidates, self.sim_budget,
                                      rng=root.child(i), random_state=self.random_state))
        self.series_ = series
        self.segmentation_ = seg
        self.fit_ = SegmentedFit(models, seg.elbow, seg.k_elbow)
        self.segments_ = models
        if self.validate:
            validate_model(self.fit_, series, self.sim_budget, root.child("validate"))
        return self

    def predict(self, X=None):
        """Segment id per bin of the fitted series."""
        return self.segmentation_.labels.copy()

    def score(self, X=None, y=None):
        if self.fit_.model_kl is None:
            validate_model(self.fit_, self.series_, self.sim_budget, RandomStream(self.random_state))
        return -self.fit_.model_kl
