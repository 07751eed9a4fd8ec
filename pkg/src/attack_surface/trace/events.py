"""Vulnerability event records and the open-vulnerability series built from them."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import List, Optional

import numpy as np

from ..errors import ParameterDomainError, ParseError, SchemaError

REQUIRED = ("id", "discovered_at", "patched_at")
OPTIONAL = ("severity", "sanitizer", "crash_type")
SEVERITIES = ("low", "medium", "high")


@dataclass(frozen=True)
class VulnEvent:
    id: str
    discovered_at: float
    patched_at: Optional[float] = None
    severity: Optional[str] = None
    sanitizer: Optional[str] = None
    crash_type: Optional[str] = None

    def __post_init__(self):
        if self.patched_at is not None and self.patched_at < self.discovered_at:
            raise ParameterDomainError(f"event {self.id}: patched before discovered")

    @property
    def is_open(self):
        return self.patched_at is None

    @property
    def duration(self):
        return None if self.patched_at is None else self.patched_at - self.discovered_at


def parse_timestamp(text: str) -> float:
    """Epoch seconds (any real number) or ISO-8601; naive datetimes are UTC."""
    text = text.strip()
    try:
        val = float(text)
    except ValueError:
        pass
    else:
        if not math.isfinite(val):
            raise ValueError(f"non-finite timestamp {text!r}")
        return val
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_trace(path) -> List[VulnEvent]:
    """Read a trace CSV.  Row numbers in errors are file line numbers (header = 1)."""
    with open(path, newline="") as fh:
        return parse_trace_text(fh.read())


def parse_trace_text(text: str) -> List[VulnEvent]:
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise SchemaError(f"trace is missing required column(s): {', '.join(missing)}")
    reader.fieldnames = header
    events, bad_order, bad_time = [], [], []
    for line, row in enumerate(reader, start=2):
        try:
            disc = parse_timestamp(row["discovered_at"] or "")
            raw = (row.get("patched_at") or "").strip()
            patched = parse_timestamp(raw) if raw else None
        except (ValueError, TypeError):
            bad_time.append(line)
            continue
        if patched is not None and patched < disc:
            bad_order.append(line)
            continue
        sev = (row.get("severity") or "").strip().lower() or None
        if sev is not None and sev not in SEVERITIES:
            bad_time.append(line)
            continue
        events.append(VulnEvent(
            id=(row.get("id") or "").strip(),
            discovered_at=disc,
            patched_at=patched,
            severity=sev,
            sanitizer=(row.get("sanitizer") or "").strip() or None,
            crash_type=(row.get("crash_type") or "").strip() or None,
        ))
    if bad_time:
        raise ParseError("malformed timestamp or severity", rows=bad_time)
    if bad_order:
        raise ParseError("patched_at earlier than discovered_at", rows=bad_order)
    events.sort(key=lambda e: (e.discovered_at, e.id))
    return events


def write_trace(events, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REQUIRED + OPTIONAL)
    for e in events:
        w.writerow([e.id, repr(float(e.discovered_at)),
                    "" if e.patched_at is None else repr(float(e.patched_at)),
                    e.severity or "", e.sanitizer or "", e.crash_type or ""])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


@dataclass
class QueueSeries:
    """Open-vulnerability counts per bin.

    Bin k covers [t0 + k w, t0 + (k+1) w).  ``N[k]`` is the number open at the
    end of bin k; arrivals and patches are counted inside the bin, so
    ``N[k] - N[k-1] = arrivals[k] - patches[k]``.
    """

    bin_width: float
    t0: float
    N: np.ndarray
    arrivals: np.ndarray
    patches: np.ndarray
    discovered: np.ndarray = field(default_factory=lambda: np.empty(0))
    patched: np.ndarray = field(default_factory=lambda: np.empty(0))  # NaN when open

    def __len__(self):
        return self.N.size

    @property
    def horizon(self) -> float:
        return self.N.size * self.bin_width

    def bin_start(self, k):
        return self.t0 + np.asarray(k) * self.bin_width

    def bin_of(self, t):
        return np.floor((np.asarray(t) - self.t0) / self.bin_width).astype(np.int64)

    def window(self, start: int, end: int):
        """Event arrays for events discovered in bins start..end (inclusive)."""
        lo, hi = self.bin_start(start), self.bin_start(end + 1)
        sel = (self.discovered >= lo) & (self.discovered < hi)
        return self.discovered[sel], self.patched[sel]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "start", "N", "arrivals", "patches"])
        for k in range(self.N.size):
            w.writerow([k, repr(float(self.bin_start(k))), int(self.N[k]),
                        int(self.arrivals[k]), int(self.patches[k])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def reconstruct_queue(events, bin_width: float, t0: float = None, t_end: float = None,
                      n_bins: int = None) -> QueueSeries:
    """Bin events into an open-count series.

    The horizon runs from ``t0`` (default: first discovery) to ``t_end``
    (default: last timestamp of any kind), inclusive.  ``n_bins`` instead
    fixes the horizon to exactly that many bins.  Events still open at the
    horizon stay in N to the end.
    """
    if not bin_width > 0:
        raise ParameterDomainError("bin_width must be > 0")
    if n_bins is not None:
        if t0 is None:
            t0 = min((e.discovered_at for e in events), default=0.0)
        # last representable instant strictly inside bin n_bins - 1
        t_end = np.nextafter(t0 + n_bins * bin_width, -np.inf)
    disc = np.array([e.discovered_at for e in events], dtype=float)
    pat = np.array([np.nan if e.patched_at is None else e.patched_at for e in events], dtype=float)
    if disc.size == 0:
        t0 = 0.0 if t0 is None else float(t0)
        if t_end is None:
            k = 0
        else:
            k = int(math.floor((t_end - t0) / bin_width)) + 1
        if n_bins is not None:
            k = n_bins
        z = np.zeros(max(k, 0), dtype=np.int64)
        return QueueSeries(bin_width, t0, z, z.copy(), z.copy(), disc, pat)
    t0 = float(disc.min()) if t0 is None else float(t0)
    last = float(np.nanmax(np.concatenate([disc, pat])))
    t_end = last if t_end is None else float(t_end)
    if t_end < t0:
        raise ParameterDomainError("t_end precedes t0")
    K = int(math.floor((t_end - t0) / bin_width)) + 1 if n_bins is None else int(n_bins)
    keep = (disc >= t0) & (disc <= t_end)
    disc, pat = disc[keep], pat[keep]

    a_bin = np.minimum(np.floor((disc - t0) / bin_width).astype(np.int64), K - 1)
    arrivals = np.bincount(a_bin, minlength=K)[:K]
    done = ~np.isnan(pat) & (pat <= t_end)
    p_bin = np.minimum(np.floor((pat[done] - t0) / bin_width).astype(np.int64), K - 1)
    patches = np.bincount(p_bin, minlength=K)[:K]
    N = np.cumsum(arrivals - patches).astype(np.int64)
    return QueueSeries(float(bin_width), t0, N, arrivals.astype(np.int64),
                       patches.astype(np.int64), disc, pat)
