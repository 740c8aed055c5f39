"""Caller/callee reconstruction, calling context tree, inclusive/exclusive metrics."""

import logging

import numpy as np

from .errors import MismatchedLeave, MissingMetric
from .model import ABSENT, Cct, EventKind, EventTable, Trace

log = logging.getLogger(__name__)

ENTER, LEAVE, INSTANT = int(EventKind.Enter), int(EventKind.Leave), int(EventKind.Instant)


def _scan(events, strict):
    """Replay each stream with a call stack.

    Returns the matching/parent/depth columns and a list of repairs.  A repair
    is ``("drop", row)`` for an orphan Leave or ``("close", before_row, enter_row, ts)``
    for a synthetic Leave to insert before ``before_row`` (``None`` = stream end).
    """
    n = len(events)
    matching = np.full(n, ABSENT, dtype=np.int64)
    parent = np.full(n, ABSENT, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    kind = events.kind.tolist()
    nid = events.name_id.tolist()
    ts = events.timestamp
    t_max = int(ts.max()) if n else 0
    repairs = []
    for _, _, lo, hi in events.streams():
        stack = []
        for i in range(lo, hi):
            k = kind[i]
            if k == ENTER:
                parent[i] = stack[-1] if stack else ABSENT
                depth[i] = len(stack)
                stack.append(i)
            elif k == LEAVE:
                if stack and nid[stack[-1]] == nid[i]:
                    j = stack.pop()
                    matching[i] = j
                    matching[j] = i
                    parent[i] = parent[j]
                    depth[i] = depth[j]
                    continue
                if strict:
                    why = "empty call stack" if not stack else f"expected {events.names[nid[stack[-1]]]!r}"
                    raise MismatchedLeave(i, why)
                pos = next((d for d in range(len(stack) - 1, -1, -1) if nid[stack[d]] == nid[i]), None)
                if pos is None:
                    repairs.append(("drop", i))
                    continue
                t = int(ts[i])
                while len(stack) > pos + 1:
                    repairs.append(("close", i, stack.pop(), t))
                j = stack.pop()
                matching[i] = j
                matching[j] = i
                parent[i] = parent[j]
                depth[i] = depth[j]
            else:
                parent[i] = stack[-1] if stack else ABSENT
                depth[i] = len(stack)
        while stack:
            repairs.append(("close", None if hi == n else hi, stack.pop(), t_max))
    return matching, parent, depth, repairs


def _apply_repairs(events, repairs):
    drops = {r[1] for r in repairs if r[0] == "drop"}
    inserts = {}
    for r in repairs:
        if r[0] == "close":
            inserts.setdefault(r[1], []).append((r[2], r[3]))
    order = []  # non-negative: original row; negative: -(k+1) into synth
    synth = []
    n = len(events)
    for i in range(n + 1):
        for enter_row, t in inserts.get(i if i < n else None, ()):
            synth.append((enter_row, t))
            order.append(-len(synth))
        if i < n and i not in drops:
            order.append(i)
    ts, kind, nid, proc, thr, attrs = [], [], [], [], [], []
    for o in order:
        if o >= 0:
            src, t, k, a = o, int(events.timestamp[o]), int(events.kind[o]), events.attrs[o]
        else:
            src, t = synth[-o - 1]
            k, a = LEAVE, {"synthetic_leave": 1}
        ts.append(t)
        kind.append(k)
        nid.append(int(events.name_id[src]))
        proc.append(int(events.process[src]))
        thr.append(int(events.thread[src]))
        attrs.append(a)
    return EventTable(ts, kind, nid, proc, thr, attrs, events.names), len(drops), len(synth)


def match_caller_callee(trace, strict=False):
    """Pair Enter/Leave events and derive parent and depth columns.

    In lenient mode (the default) orphan Leaves are dropped and calls left
    open by a mismatched Leave or by the end of the trace are closed with a
    synthetic Leave flagged ``synthetic_leave=1``; the repaired table
    replaces ``trace.events``.

    Raises:
        MismatchedLeave: in strict mode, when a Leave does not close the
            innermost open call.
    """
    ev = trace.events
    if ev.has("matching_index"):
        return trace
    matching, parent, depth, repairs = _scan(ev, strict)
    if repairs:
        table, dropped, added = _apply_repairs(ev, repairs)
        trace.events = table
        trace.cct = None
        trace.metadata["mismatch_count"] = str(int(trace.metadata.get("mismatch_count", 0)) + dropped)
        trace.metadata["synthetic_leaves"] = str(int(trace.metadata.get("synthetic_leaves", 0)) + added)
        log.info("repaired trace: %d orphan leaves dropped, %d synthetic leaves", dropped, added)
        ev = table
        matching, parent, depth, again = _scan(ev, strict)
        assert not again
    ev.set_derived("matching_index", matching)
    ev.set_derived("parent_index", parent)
    ev.set_derived("depth", depth)
    return trace


def create_cct(trace):
    """Build the union calling context tree and the ``cct_node_id`` column.

    Identical call paths on different processes, threads or times share one
    node; each distinct top-level function is a root.
    """
    match_caller_callee(trace)
    ev = trace.events
    if trace.cct is not None and ev.has("cct_node_id"):
        return trace.cct
    cct = Cct()
    n = len(ev)
    node = np.full(n, ABSENT, dtype=np.int64)
    kind = ev.kind.tolist()
    nid = ev.name_id.tolist()
    parent = ev.get("parent_index").tolist()
    matching = ev.get("matching_index").tolist()
    for i in range(n):
        if kind[i] != ENTER:
            continue
        p = parent[i]
        node[i] = cct.child(node[p] if p != ABSENT else ABSENT, nid[i])
        m = matching[i]
        if m != ABSENT:
            node[m] = node[i]
    ev.set_derived("cct_node_id", node)
    trace.cct = cct
    return cct


def calc_inc_metrics(trace, metric="timestamp"):
    """Inclusive value of every call, stored on its Enter row.

    ``metric="timestamp"`` fills ``inc_ns``; any other name is read from the
    event attributes and stored as ``inc_<metric>`` (Leave minus Enter value).
    """
    match_caller_callee(trace)
    ev = trace.events
    column = "inc_ns" if metric == "timestamp" else f"inc_{metric}"
    if ev.has(column):
        return trace
    matching = ev.get("matching_index")
    enters = np.flatnonzero(ev.kind == ENTER)
    leaves = matching[enters]
    if metric == "timestamp":
        inc = np.full(len(ev), ABSENT, dtype=np.int64)
        inc[enters] = ev.timestamp[leaves] - ev.timestamp[enters]
    else:
        inc = np.full(len(ev), np.nan)
        for e, l in zip(enters.tolist(), leaves.tolist()):
            a, b = ev.attr(e, metric), ev.attr(l, metric)
            if not isinstance(a, (int, float)) or not isinstance(b, (int, float)):
                raise MissingMetric(f"attribute {metric!r} missing on call at row {e}")
            inc[e] = b - a
    ev.set_derived(column, inc)
    return trace


def calc_exc_metrics(trace, metric="timestamp"):
    """Exclusive value: inclusive value minus the direct children's inclusive values."""
    calc_inc_metrics(trace, metric)
    ev = trace.events
    inc_col, exc_col = ("inc_ns", "exc_ns") if metric == "timestamp" else (f"inc_{metric}", f"exc_{metric}")
    if ev.has(exc_col):
        return trace
    inc = ev.get(inc_col)
    parent = ev.get("parent_index")
    enters = np.flatnonzero(ev.kind == ENTER)
    child = enters[parent[enters] != ABSENT]
    if metric == "timestamp":
        child_sum = np.zeros(len(ev), dtype=np.int64)
        np.add.at(child_sum, parent[child], inc[child])
        exc = np.full(len(ev), ABSENT, dtype=np.int64)
    else:
        child_sum = np.zeros(len(ev))
        np.add.at(child_sum, parent[child], inc[child])
        exc = np.full(len(ev), np.nan)
    exc[enters] = inc[enters] - child_sum[enters]
    ev.set_derived(exc_col, exc)
    return trace


def ensure_metrics(trace):
    """Matching plus time inclusive/exclusive columns; returns the event table."""
    calc_exc_metrics(trace)
    return trace.events


def enter_rows(events):
    return np.flatnonzero(events.kind == ENTER)


def metric_column(trace, metric):
    """Resolve a metric name (``exc_ns``, ``inc_ns``, ``exc_<attr>``...) to a per-row column."""
    if metric in ("exc_ns", "inc_ns", "time.exc", "time.inc"):
        metric = {"time.exc": "exc_ns", "time.inc": "inc_ns"}.get(metric, metric)
        ensure_metrics(trace)
        return trace.events.get(metric)
    for prefix in ("exc_", "inc_"):
        if metric.startswith(prefix):
            attr = metric[len(prefix):]
            calc_exc_metrics(trace, attr)
            return trace.events.get(metric)
    raise MissingMetric(f"unknown metric {metric!r}")


def exclusive_segments(trace):
    """Maximal time segments during which one call is innermost on its stream.

    Returns ``(owner, start, end)`` arrays; ``owner`` is the Enter row of the
    call.  Summing ``end - start`` per owner reproduces ``exc_ns``.
    """
    match_caller_callee(trace)
    ev = trace.events
    n = len(ev)
    if n < 2:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    owner = np.where(ev.kind == ENTER, np.arange(n), ev.get("parent_index"))
    sid = ev.stream_ids()
    same = sid[:-1] == sid[1:]
    start = ev.timestamp[:-1]
    end = ev.timestamp[1:]
    own = owner[:-1]
    keep = same & (own != ABSENT) & (end > start)
    return own[keep], start[keep], end[keep]


def call_intervals(trace):
    """``(enter_row, start, end)`` of every call."""
    match_caller_callee(trace)
    ev = trace.events
    enters = np.flatnonzero(ev.kind == ENTER)
    leaves = ev.get("matching_index")[enters]
    return enters, ev.timestamp[enters], ev.timestamp[leaves]
