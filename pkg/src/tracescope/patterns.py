"""Matrix profile and iteration detection on trace-derived series."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .callgraph import ENTER, INSTANT, ensure_metrics
from .errors import NoOccurrences, SeriesTooShort
from .profiles import bin_edges, time_profile

log = logging.getLogger(__name__)

_BLOCK = 512


@dataclass
class MatrixProfile:
    window: int
    exclusion: int
    profile: np.ndarray
    profile_index: np.ndarray

    def motifs(self, threshold):
        """Indices whose nearest-neighbour distance is at most ``threshold``."""
        return np.flatnonzero(self.profile <= threshold)


def znormalize(windows):
    """Z-normalize each row; rows with no spread become all zeros."""
    windows = np.asarray(windows, dtype=float)
    mu = windows.mean(axis=1, keepdims=True)
    sigma = windows.std(axis=1, keepdims=True)
    constant = np.ptp(windows, axis=1) == 0
    sigma[constant] = 1.0
    z = (windows - mu) / sigma
    z[constant] = 0.0
    return z, constant


def matrix_profile(series, window, exclusion=None):
    """Nearest non-trivial neighbour of every length-``window`` subsequence.

    Distances are Euclidean between z-normalized subsequences.  Two
    constant subsequences are at distance 0; a constant and a non-constant
    one at ``sqrt(window)``, the norm of the z-normalized one.  Neighbours within ``exclusion`` positions
    (default ``ceil(window / 2)``) are ignored; a subsequence without any
    admissible neighbour gets ``inf`` and index ``-1``.

    Raises:
        SeriesTooShort: ``len(series) < window + exclusion + 1``.
    """
    t = np.asarray(series, dtype=float)
    m = int(window)
    if m < 3:
        raise ValueError(f"window must be >= 3, got {m}")
    excl = math.ceil(m / 2) if exclusion is None else int(exclusion)
    n = len(t)
    if n < m + excl + 1:
        raise SeriesTooShort(f"series of length {n} too short for window {m} with exclusion {excl}")
    if not np.all(np.isfinite(t)):
        raise ValueError("series contains non-finite values")
    z, constant = znormalize(sliding_window_view(t, m))
    count = len(z)
    profile = np.full(count, np.inf)
    index = np.full(count, -1, dtype=np.int64)
    cols = np.arange(count)
    for lo in range(0, count, _BLOCK):
        hi = min(count, lo + _BLOCK)
        d2 = 2.0 * m - 2.0 * (z[lo:hi] @ z.T)
        ci, cj = constant[lo:hi, None], constant[None, :]
        d2[ci & cj] = 0.0
        d2[ci ^ cj] = float(m)
        np.maximum(d2, 0.0, out=d2)
        rows = np.arange(lo, hi)[:, None]
        d2[np.abs(rows - cols[None, :]) <= excl] = np.inf
        best = np.argmin(d2, axis=1)
        ok = np.isfinite(d2[np.arange(hi - lo), best])
        index[lo:hi][ok] = best[ok]
    # exact distance for the chosen neighbour
    has = index >= 0
    i = np.flatnonzero(has)
    j = index[has]
    diff = z[i] - z[j]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    d[constant[i] & constant[j]] = 0.0
    profile[has] = d
    return MatrixProfile(m, excl, profile, index)


# ---------------------------------------------------------------------------
# series extraction


@dataclass
class SeriesSpec:
    """Recipe for a numeric series derived from a trace.

    ``source`` is one of ``"inter_arrival"`` (gaps between consecutive
    occurrences of ``name`` on the busiest process), ``"event_durations"``
    (inclusive durations of calls to ``name``), ``"binned_exc"`` (exclusive
    time of ``name`` per time bin) or ``"event_rate"`` (events per time bin).
    """

    source: str
    name: str = None
    bins: int = 100
    process: int = None

    def build(self, trace):
        """Return ``(values, times)``; ``times[k]`` is the timestamp series index ``k`` starts at."""
        if self.source == "inter_arrival":
            occ = occurrences(trace, self.name, self.process)
            return np.diff(occ), occ[:-1]
        if self.source == "event_durations":
            ev = ensure_metrics(trace)
            nid = ev.lookup(self.name)
            rows = np.flatnonzero((ev.kind == ENTER) & (ev.name_id == nid)) if nid is not None else np.zeros(0, int)
            if self.process is not None:
                rows = rows[ev.process[rows] == self.process]
            rows = rows[np.argsort(ev.timestamp[rows], kind="stable")]
            return ev.get("inc_ns")[rows].astype(float), ev.timestamp[rows]
        if self.source == "binned_exc":
            tp = time_profile(trace, self.bins, functions=[self.name])
            vals = np.array(tp.column(self.name) if tp.column_labels else [0] * self.bins, dtype=float)
            return vals, np.array(tp.edges[:-1])
        if self.source == "event_rate":
            ev = trace.events
            lo, hi = int(ev.timestamp.min()), int(ev.timestamp.max())
            edges = bin_edges(lo, hi, self.bins)
            idx = np.clip(np.searchsorted(edges, ev.timestamp, side="right") - 1, 0, self.bins - 1)
            return np.bincount(idx, minlength=self.bins).astype(float), edges[:-1]
        raise ValueError(f"unknown series source {self.source!r}")


def occurrences(trace, name, process=None):
    """Sorted timestamps of ``name`` (Enter events, else Instants) on one process.

    Without ``process`` the process with the most occurrences is used
    (lowest rank on ties).
    """
    ev = trace.events
    nid = ev.lookup(name)
    if nid is None:
        raise NoOccurrences(f"{name!r} does not occur in the trace")
    rows = np.flatnonzero((ev.name_id == nid) & (ev.kind == ENTER))
    if len(rows) == 0:
        rows = np.flatnonzero((ev.name_id == nid) & (ev.kind == INSTANT))
    if process is None:
        if len(rows) == 0:
            raise NoOccurrences(f"{name!r} has no Enter or Instant events")
        procs, counts = np.unique(ev.process[rows], return_counts=True)
        process = int(procs[np.argmax(counts)])
    rows = rows[ev.process[rows] == process]
    occ = np.sort(ev.timestamp[rows])
    if len(occ) < 2:
        raise NoOccurrences(f"{name!r} occurs {len(occ)} time(s) on process {process}; need at least 2")
    return occ


def default_window(n):
    return max(4, n // 10)


def detect_period(series, window=None, threshold=0.05):
    """Repeat length of ``series`` in samples, found from matrix-profile motifs.

    A constant series has period 1.  Otherwise the motif threshold is
    ``threshold`` times ``2 * sqrt(window)``, the largest possible
    z-normalized distance.  The period is the largest lag dividing at least
    80% of the nearest-neighbour lags of motif subsequences and no smaller
    share than any other lag.  Returns
    ``None`` when no motif is found.
    """
    d = np.asarray(series, dtype=float)
    if len(d) and np.ptp(d) == 0:
        return 1
    m = window or default_window(len(d))
    mp = matrix_profile(d, m)
    motif = mp.motifs(threshold * 2.0 * math.sqrt(m))
    motif = motif[mp.profile_index[motif] >= 0]
    if len(motif) == 0:
        return None
    lags = np.abs(mp.profile_index[motif] - motif)
    cands = np.arange(2, int(lags.min()) + 1)
    if len(cands) == 0:
        return 1
    share = np.array([np.mean(lags % c == 0) for c in cands])
    best = share.max()
    if best < 0.8:
        return 1
    # largest candidate explaining as many motif lags as any other
    return int(cands[share >= best][-1])


def pattern_detection(trace, start_event, window=None, threshold=0.05, process=None):
    """Detect iterations that begin with ``start_event``.

    The gaps between consecutive occurrences of ``start_event`` on the
    busiest process form a series; its repeat length ``p`` (see
    :func:`detect_period`) groups occurrences into iterations.  Iteration
    ``i`` spans from occurrence ``i*p`` to occurrence ``(i+1)*p``, so spans
    are disjoint, ordered and start/end on occurrences of ``start_event``.

    Returns:
        list of ``(start_ts, end_ts)`` tuples.

    Raises:
        NoOccurrences: fewer than two occurrences.
        SeriesTooShort: the gap series is too short for the window.
    """
    occ = occurrences(trace, start_event, process)
    gaps = np.diff(occ)
    period = detect_period(gaps, window, threshold)
    if period is None:
        log.warning("no repeating pattern found for %r", start_event)
        return []
    k = len(gaps) // period
    return [(int(occ[i * period]), int(occ[(i + 1) * period])) for i in range(k)]
