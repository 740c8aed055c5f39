"""Point-to-point message matching and communication analyses."""

import fnmatch
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .callgraph import ENTER, INSTANT, call_intervals, exclusive_segments, match_caller_callee
from .errors import BadBinCount, EmptyTrace, NoCommData
from .intervals import IntervalSet
from .model import ABSENT, AnalysisTable, time_span
from .profiles import bin_edges
from .readers import RECV_NAME, SEND_NAME

COMM_NAMES = frozenset({SEND_NAME, RECV_NAME})


@dataclass(frozen=True)
class MessageRecord:
    sender: int
    receiver: int
    bytes: int
    tag: int
    send_ts: int
    recv_ts: int
    send_row: int
    recv_row: int = ABSENT

    @property
    def matched(self):
        return self.recv_row != ABSENT


@dataclass
class MessageMatch:
    messages: list
    unmatched_sends: list
    unmatched_recvs: list

    def all_sends(self):
        """Matched messages plus unmatched sends, ordered by send row."""
        return sorted(self.messages + self.unmatched_sends, key=lambda m: m.send_row)


def _int_attr(a, key, default=0):
    v = a.get(key, default) if a else default
    try:
        return int(v)
    except (TypeError, ValueError):
        return default


def match_messages(trace):
    """Pair MpiSend/MpiRecv instants FIFO per (sender, receiver, tag) channel.

    Unmatched sends and receives are returned separately; they are data, not
    errors.  The result is cached on the trace.
    """
    ev = trace.events
    cached = getattr(trace, "_messages", None)
    if cached is not None and cached[0] is ev:
        return cached[1]
    send_id, recv_id = ev.lookup(SEND_NAME), ev.lookup(RECV_NAME)
    inst = ev.kind == INSTANT
    sends = np.flatnonzero(inst & (ev.name_id == send_id)) if send_id is not None else np.zeros(0, dtype=np.int64)
    recvs = np.flatnonzero(inst & (ev.name_id == recv_id)) if recv_id is not None else np.zeros(0, dtype=np.int64)
    channels_s = defaultdict(list)
    channels_r = defaultdict(list)
    for r in sends.tolist():
        a = ev.attrs[r]
        key = (int(ev.process[r]), _int_attr(a, "partner", -1), _int_attr(a, "tag"))
        channels_s[key].append((int(ev.timestamp[r]), r))
    for r in recvs.tolist():
        a = ev.attrs[r]
        key = (_int_attr(a, "partner", -1), int(ev.process[r]), _int_attr(a, "tag"))
        channels_r[key].append((int(ev.timestamp[r]), r))
    messages, unmatched_s, unmatched_r = [], [], []
    for key in sorted(set(channels_s) | set(channels_r)):
        s_list = sorted(channels_s.get(key, ()))
        r_list = sorted(channels_r.get(key, ()))
        sender, receiver, tag = key
        for idx, (st, sr) in enumerate(s_list):
            size = _int_attr(ev.attrs[sr], "size")
            if idx < len(r_list):
                rt, rr = r_list[idx]
                messages.append(MessageRecord(sender, receiver, size, tag, st, rt, sr, rr))
            else:
                unmatched_s.append(MessageRecord(sender, receiver, size, tag, st, ABSENT, sr))
        for rt, rr in r_list[len(s_list):]:
            unmatched_r.append(MessageRecord(sender, receiver, _int_attr(ev.attrs[rr], "size"), tag,
                                             ABSENT, rt, ABSENT, rr))
    messages.sort(key=lambda m: m.send_row)
    result = MessageMatch(messages, unmatched_s, unmatched_r)
    trace._messages = (ev, result)
    return result


def _num_ranks(trace, sends):
    p = int(trace.events.process.max()) if len(trace.events) else -1
    for m in sends:
        p = max(p, m.sender, m.receiver)
    return p + 1


def _require_sends(trace):
    mm = match_messages(trace)
    sends = mm.all_sends()
    if not sends:
        raise NoCommData("trace contains no send records")
    return mm, sends


def comm_matrix(trace, output="size"):
    """P x P matrix of bytes (``output="size"``) or message counts sent i -> j.

    Unmatched sends count on the sender side.
    """
    if output not in ("size", "count"):
        raise ValueError("output must be 'size' or 'count'")
    _, sends = _require_sends(trace)
    p = _num_ranks(trace, sends)
    mat = np.zeros((p, p), dtype=np.int64)
    for m in sends:
        if m.receiver < 0:
            continue
        mat[m.sender, m.receiver] += m.bytes if output == "size" else 1
    labels = list(range(p))
    return AnalysisTable(labels, [str(j) for j in labels], mat.tolist(),
                         units={str(j): "bytes" if output == "size" else "messages" for j in labels},
                         index_name="sender")


def comm_by_process(trace, output="size"):
    """Volume (or count) sent and received per rank.

    Sent totals include unmatched sends; received totals cover matched
    messages only.
    """
    if output not in ("size", "count"):
        raise ValueError("output must be 'size' or 'count'")
    mm, sends = _require_sends(trace)
    p = _num_ranks(trace, sends)
    sent = np.zeros(p, dtype=np.int64)
    recv = np.zeros(p, dtype=np.int64)
    for m in sends:
        sent[m.sender] += m.bytes if output == "size" else 1
    for m in mm.messages:
        recv[m.receiver] += m.bytes if output == "size" else 1
    unit = "bytes" if output == "size" else "messages"
    return AnalysisTable(list(range(p)), ["sent", "received"],
                         [[int(s), int(r)] for s, r in zip(sent, recv)],
                         units={"sent": unit, "received": unit}, index_name="process")


def message_histogram(trace, bins=20):
    """Counts of message sizes in ``bins`` equal-width bins over [min, max] size."""
    if bins < 1:
        raise BadBinCount(f"bin count must be >= 1, got {bins}")
    _, sends = _require_sends(trace)
    sizes = np.array([m.bytes for m in sends], dtype=np.int64)
    edges = bin_edges(int(sizes.min()), int(sizes.max()), bins)
    idx = np.clip(np.searchsorted(edges, sizes, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    rows = [[int(edges[b]), int(edges[b + 1]), int(counts[b])] for b in range(bins)]
    table = AnalysisTable(list(range(bins)), ["lo", "hi", "count"], rows,
                          units={"lo": "bytes", "hi": "bytes", "count": "messages"}, index_name="bin")
    table.edges = edges.tolist()
    return table


def comm_over_time(trace, bins=100, by="send"):
    """Message count and volume per time bin, binned by send (or receive) timestamp.

    Bins span the whole trace; each is half-open except the last.
    """
    if bins < 1:
        raise BadBinCount(f"bin count must be >= 1, got {bins}")
    mm, sends = _require_sends(trace)
    t_min, t_max = time_span(trace)
    edges = bin_edges(t_min, t_max, bins)
    if by == "send":
        stamps = [(m.send_ts, m.bytes) for m in sends]
    elif by == "recv":
        stamps = [(m.recv_ts, m.bytes) for m in mm.messages]
    else:
        raise ValueError("by must be 'send' or 'recv'")
    ts = np.array([s for s, _ in stamps], dtype=np.int64)
    vol = np.array([b for _, b in stamps], dtype=np.int64)
    idx = np.clip(np.searchsorted(edges, ts, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    volume = np.zeros(bins, dtype=np.int64)
    np.add.at(volume, idx, vol)
    rows = [[int(counts[b]), int(volume[b])] for b in range(bins)]
    table = AnalysisTable(edges[:-1].tolist(), ["count", "volume"], rows,
                          units={"count": "messages", "volume": "bytes"}, index_name="bin_start")
    table.edges = edges.tolist()
    return table


def default_comm_predicate(name):
    """MPI_* calls, the message instants and anything containing ``nccl``."""
    return name.startswith("MPI_") or name in COMM_NAMES or "nccl" in name.lower()


def make_comm_predicate(patterns):
    """Predicate from glob patterns, e.g. ``["MPI_*", "*nccl*"]``."""
    patterns = list(patterns)
    return lambda name: any(fnmatch.fnmatchcase(name, p) for p in patterns)


BREAKDOWN_COLUMNS = ("comp_only", "overlap", "comm_only", "other")


def comm_comp_breakdown(trace, comm_predicate=default_comm_predicate):
    """Split each process span into computation/communication overlap categories.

    For process p with span S = [first ts, last ts): Comm is the union of the
    inclusive intervals of communication calls over all of p's threads and
    streams, Comp the union of exclusive intervals of other calls that are
    not nested inside a communication call.  Columns are
    |Comp minus Comm|, |Comm and Comp|, |Comm minus Comp| and the rest of S;
    they sum to |S|.  The last row aggregates all processes.
    """
    if len(trace.events) == 0:
        raise EmptyTrace("empty trace")
    match_caller_callee(trace)
    ev = trace.events
    is_comm_name = np.array([bool(comm_predicate(n)) for n in ev.names], dtype=bool)
    comm_row = is_comm_name[ev.name_id] & (ev.kind == ENTER)
    # a call is "inside comm" when it or an ancestor is a comm call; parents precede children
    parent = ev.get("parent_index").tolist()
    inside = comm_row.copy()
    for i in np.flatnonzero(ev.kind == ENTER).tolist():
        p = parent[i]
        if p != ABSENT and inside[p]:
            inside[i] = True
    enters, c_lo, c_hi = call_intervals(trace)
    owner, s_lo, s_hi = exclusive_segments(trace)
    comp_seg = ~inside[owner]
    comm_call = comm_row[enters]

    procs = np.unique(ev.process).tolist()
    rows = []
    for p in procs:
        sel = ev.process == p
        span = IntervalSet([(int(ev.timestamp[sel].min()), int(ev.timestamp[sel].max()))])
        cm = ev.process[enters] == p
        comm = IntervalSet.from_arrays(c_lo[cm & comm_call], c_hi[cm & comm_call]).clip(*span.intervals[0]) \
            if span.measure() else IntervalSet()
        sm = (ev.process[owner] == p) & comp_seg
        comp = IntervalSet.from_arrays(s_lo[sm], s_hi[sm]).clip(*span.intervals[0]) \
            if span.measure() else IntervalSet()
        total = span.measure()
        rows.append([(comp - comm).measure(), (comm & comp).measure(), (comm - comp).measure(),
                     total - (comm | comp).measure()])
    agg = [sum(r[j] for r in rows) for j in range(4)]
    labels = [str(p) for p in procs] + ["all"]
    return AnalysisTable(labels, list(BREAKDOWN_COLUMNS), rows + [agg],
                         units={c: "ns" for c in BREAKDOWN_COLUMNS}, index_name="process")
