"""Flat profiles and binned time profiles."""

import numpy as np

from .callgraph import ENTER, call_intervals, create_cct, ensure_metrics, exclusive_segments, metric_column
from .errors import BadBinCount, EmptyTrace
from .model import AnalysisTable, time_span

DEFAULT_BINS = 100


def bin_edges(lo, hi, bins):
    """Integer edges splitting ``[lo, hi]`` into ``bins`` near-equal bins.

    Edge ``k`` is ``lo + floor(k * (hi - lo) / bins)`` so every edge is an
    exact nanosecond and the bins partition the range.
    """
    if bins < 1:
        raise BadBinCount(f"bin count must be >= 1, got {bins}")
    k = np.arange(bins + 1, dtype=np.int64)
    return lo + (k * (hi - lo)) // bins


def _group_keys(trace, group_by):
    ev = trace.events
    if group_by == "name":
        return ev.name_id, ev.names
    if group_by in ("cct_node", "path"):
        cct = create_cct(trace)
        labels = [" > ".join(ev.names[i] for i in cct.path(n.node_id)) for n in cct.nodes]
        return ev.get("cct_node_id"), labels
    raise ValueError(f"unknown group_by {group_by!r}")


def flat_profile(trace, metric="exc_ns", group_by="name", per_process=False):
    """Total of ``metric`` per function over the whole trace.

    Args:
        trace: Trace to summarize.
        metric: ``exc_ns``, ``inc_ns`` or ``exc_<attr>`` / ``inc_<attr>``.
        group_by: ``"name"`` or ``"path"`` (one row per calling context).
        per_process: Add one column per rank plus a ``total`` column.

    Returns:
        AnalysisTable sorted by total, descending.
    """
    ev = trace.events
    if len(ev) == 0:
        raise EmptyTrace("cannot profile an empty trace")
    values = metric_column(trace, metric)
    ev = trace.events
    keys, labels = _group_keys(trace, group_by)
    enters = np.flatnonzero(ev.kind == ENTER)
    k = keys[enters]
    v = values[enters]
    integral = np.issubdtype(values.dtype, np.integer)
    totals = _sum_by(k, v, len(labels), integral)
    present = np.unique(k)
    order = sorted(present.tolist(), key=lambda g: (-totals[g], labels[g]))
    if not per_process:
        cells = [[_py(totals[g], integral)] for g in order]
        return AnalysisTable([labels[g] for g in order], [metric], cells,
                             units={metric: _unit(metric)}, index_name="name")
    procs = np.unique(ev.process).tolist()
    pidx = np.searchsorted(procs, ev.process[enters])
    grid = np.zeros((len(labels), len(procs)), dtype=np.int64 if integral else float)
    np.add.at(grid, (k, pidx), v)
    cols = [f"P{p}" for p in procs] + ["total"]
    cells = [[_py(x, integral) for x in grid[g]] + [_py(totals[g], integral)] for g in order]
    return AnalysisTable([labels[g] for g in order], cols, cells,
                         units={c: _unit(metric) for c in cols}, index_name="name")


def _sum_by(keys, values, size, integral):
    out = np.zeros(size, dtype=np.int64 if integral else float)
    np.add.at(out, keys, values)
    return out


def _py(x, integral):
    return int(x) if integral else float(x)


def _unit(metric):
    return "ns" if metric.endswith("_ns") else ""


def time_profile(trace, bins=DEFAULT_BINS, metric="exc_ns", functions=None):
    """Time spent per function in each of ``bins`` equal-width time bins.

    With ``metric="exc_ns"`` each call contributes the overlap of its
    exclusive intervals (its inclusive interval minus its children's) with
    the bin, so a bin's row sums to at most ``bin_width x streams``.
    ``metric="inc_ns"`` bins whole inclusive intervals instead.

    Returns:
        AnalysisTable with one row per bin (labelled by the bin's start
        timestamp) and one column per function; the integer bin edges are
        available as ``table.edges``.
    """
    if bins < 1:
        raise BadBinCount(f"bin count must be >= 1, got {bins}")
    if metric not in ("exc_ns", "inc_ns"):
        raise ValueError("time_profile supports exc_ns or inc_ns")
    ensure_metrics(trace)
    t_min, t_max = time_span(trace)
    ev = trace.events
    edges = bin_edges(t_min, t_max, bins)
    if metric == "exc_ns":
        owner, start, end = exclusive_segments(trace)
    else:
        owner, start, end = call_intervals(trace)
    fid = ev.name_id[owner]
    if functions is not None:
        wanted = {ev.lookup(f) for f in functions} - {None}
        keep = np.isin(fid, list(wanted))
        fid, start, end = fid[keep], start[keep], end[keep]
    grid = _bin_intervals(fid, start, end, edges, len(ev.names))

    # column order: total descending, then name
    totals = grid.sum(axis=0)
    if functions is not None:
        cols = [ev.lookup(f) for f in dict.fromkeys(functions) if ev.lookup(f) is not None]
    else:
        cols = np.unique(fid).tolist()
    cols.sort(key=lambda f: (-totals[f], ev.names[f]))
    table = AnalysisTable(edges[:-1].tolist(), [ev.names[f] for f in cols],
                          [[int(grid[b, f]) for f in cols] for b in range(bins)],
                          units={ev.names[f]: "ns" for f in cols}, index_name="bin_start")
    table.edges = edges.tolist()
    return table


def _bin_intervals(fid, start, end, edges, nfuncs):
    """Exact integer overlap of each interval with each bin, summed per function."""
    bins = len(edges) - 1
    grid = np.zeros((bins, nfuncs), dtype=np.int64)
    if len(start) == 0:
        return grid
    widths = np.diff(edges)
    first = np.clip(np.searchsorted(edges, start, side="right") - 1, 0, bins - 1)
    last = np.clip(np.searchsorted(edges, end, side="left") - 1, 0, bins - 1)
    single = first == last
    np.add.at(grid, (first[single], fid[single]), (end - start)[single])
    multi = ~single
    if multi.any():
        f, s, e, a, b = fid[multi], start[multi], end[multi], first[multi], last[multi]
        np.add.at(grid, (a, f), edges[a + 1] - s)
        np.add.at(grid, (b, f), e - edges[b])
        # bins strictly inside (a, b) are fully covered: difference array of counts
        span = b - a > 1
        if span.any():
            diff = np.zeros((bins + 1, nfuncs), dtype=np.int64)
            np.add.at(diff, (a[span] + 1, f[span]), 1)
            np.add.at(diff, (b[span], f[span]), -1)
            cover = np.cumsum(diff[:-1], axis=0)
            grid += cover * widths[:, None]
    return grid
