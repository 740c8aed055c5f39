"""Load imbalance, idle time, logical-step lateness and critical path."""

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .callgraph import ENTER, INSTANT, LEAVE, ensure_metrics, metric_column
from .comm import COMM_NAMES, match_messages
from .errors import CycleDetected, EmptyTrace
from .model import ABSENT, AnalysisTable

DEFAULT_IDLE_NAMES = frozenset({"MPI_Recv", "MPI_Wait", "MPI_Waitall", "MPI_Waitany", "MPI_Barrier"})


def load_imbalance(trace, metric="exc_ns", top_k=5):
    """Per-function imbalance ratio: max over ranks / mean over ranks.

    The mean runs over every rank present in the trace; a rank that never
    calls the function contributes zero.  Rows are sorted by total,
    descending, and carry the ``top_k`` most loaded ranks.
    """
    if len(trace.events) == 0:
        raise EmptyTrace("empty trace")
    values = metric_column(trace, metric)
    ev = trace.events
    procs = np.unique(ev.process)
    enters = np.flatnonzero(ev.kind == ENTER)
    pidx = np.searchsorted(procs, ev.process[enters])
    integral = np.issubdtype(values.dtype, np.integer)
    grid = np.zeros((len(ev.names), len(procs)), dtype=np.int64 if integral else float)
    np.add.at(grid, (ev.name_id[enters], pidx), values[enters])
    k = min(top_k, len(procs))
    nranks = len(procs)
    rows, labels = [], []
    present = np.unique(ev.name_id[enters]).tolist()
    totals = grid.sum(axis=1)
    present.sort(key=lambda f: (-totals[f], ev.names[f]))
    for f in present:
        loads = grid[f]
        total = loads.sum()
        peak = loads.max()
        # max / (total / n), arranged so integer inputs stay exact until the final division
        ratio = float(peak * nranks) / float(total) if total != 0 else 1.0
        order = sorted(range(nranks), key=lambda j: (-loads[j], procs[j]))[:k]
        labels.append(ev.names[f])
        rows.append([int(total) if integral else float(total), ratio] + [int(procs[j]) for j in order])
    cols = [metric, "imbalance"] + [f"top{i + 1}" for i in range(k)]
    return AnalysisTable(labels, cols, rows, units={metric: "ns" if metric.endswith("_ns") else ""},
                         index_name="name")


@dataclass
class IdleTime:
    table: AnalysisTable
    most: AnalysisTable
    least: AnalysisTable


def idle_time(trace, idle_names=DEFAULT_IDLE_NAMES, k=5):
    """Idle nanoseconds per process.

    Idle time is the inclusive time of maximal calls whose name is in
    ``idle_names``; an idle call nested in another idle call is not counted
    twice.  Returns the full per-process table plus the ``k`` most and ``k``
    least idle processes.
    """
    if len(trace.events) == 0:
        raise EmptyTrace("empty trace")
    ensure_metrics(trace)
    ev = trace.events
    idle_ids = {ev.lookup(n) for n in idle_names} - {None}
    is_idle = np.isin(ev.name_id, list(idle_ids)) & (ev.kind == ENTER)
    parent = ev.get("parent_index").tolist()
    covered = np.zeros(len(ev), dtype=bool)  # has an idle ancestor
    for i in np.flatnonzero(ev.kind == ENTER).tolist():
        p = parent[i]
        if p != ABSENT and (covered[p] or is_idle[p]):
            covered[i] = True
    maximal = is_idle & ~covered
    procs = np.unique(ev.process)
    idle = np.zeros(len(procs), dtype=np.int64)
    rows = np.flatnonzero(maximal)
    np.add.at(idle, np.searchsorted(procs, ev.process[rows]), ev.get("inc_ns")[rows])
    table = AnalysisTable(procs.tolist(), ["idle_ns"], [[int(x)] for x in idle], units={"idle_ns": "ns"},
                          index_name="process")
    desc = sorted(range(len(procs)), key=lambda j: (-idle[j], procs[j]))
    asc = sorted(range(len(procs)), key=lambda j: (idle[j], procs[j]))

    def sub(order):
        order = order[:k]
        return AnalysisTable([int(procs[j]) for j in order], ["idle_ns"], [[int(idle[j])] for j in order],
                             units={"idle_ns": "ns"}, index_name="process")

    return IdleTime(table, sub(desc), sub(asc))


# ---------------------------------------------------------------------------
# logical structure


def _step_units(trace):
    """Leaf calls and message instants, each with its completion row."""
    ensure_metrics(trace)
    ev = trace.events
    n = len(ev)
    enters = np.flatnonzero(ev.kind == ENTER)
    parent = ev.get("parent_index")
    has_child = np.zeros(n, dtype=bool)
    child_parents = parent[enters]
    has_child[child_parents[child_parents != ABSENT]] = True
    leaf = enters[~has_child[enters]]
    msg_ids = [ev.lookup(x) for x in COMM_NAMES if ev.lookup(x) is not None]
    instants = np.flatnonzero((ev.kind == INSTANT) & np.isin(ev.name_id, msg_ids))
    matching = ev.get("matching_index")
    unit_row = np.concatenate((leaf, instants))
    done_row = np.concatenate((matching[leaf], instants))
    order = np.argsort(done_row, kind="stable")
    return unit_row[order], done_row[order]


def assign_logical_steps(trace):
    """Assign happens-before step indices to leaf calls and message instants.

    Along each stream steps increase by at least one; a matched receive is
    also at least one past its send.  Enclosing calls inherit the largest
    step of anything they contain.  The result lives in the ``logical_step``
    column (``-1`` where unassigned).

    Raises:
        CycleDetected: the message matching contradicts time order.
    """
    ev = trace.events
    if ev.has("logical_step"):
        return trace
    units, done = _step_units(trace)
    ev = trace.events
    mm = match_messages(trace)
    for m in mm.messages:
        if m.recv_ts < m.send_ts:
            raise CycleDetected(f"message {m.sender}->{m.receiver} received at {m.recv_ts} before send at {m.send_ts}")
    pos = {int(r): i for i, r in enumerate(units.tolist())}
    sid = ev.stream_ids()[done]
    succ = defaultdict(list)
    indeg = np.zeros(len(units), dtype=np.int64)
    by_stream = defaultdict(list)
    for i, s in enumerate(sid.tolist()):
        by_stream[s].append(i)
    for chain in by_stream.values():
        for a, b in zip(chain, chain[1:]):
            succ[a].append(b)
            indeg[b] += 1
    for m in mm.messages:
        a, b = pos[m.send_row], pos[m.recv_row]
        succ[a].append(b)
        indeg[b] += 1
    step = np.zeros(len(units), dtype=np.int64)
    queue = deque(np.flatnonzero(indeg == 0).tolist())
    seen = 0
    while queue:
        a = queue.popleft()
        seen += 1
        for b in succ.get(a, ()):
            if step[a] + 1 > step[b]:
                step[b] = step[a] + 1
            indeg[b] -= 1
            if indeg[b] == 0:
                queue.append(b)
    if seen != len(units):
        raise CycleDetected("happens-before relation contains a cycle")

    col = np.full(len(ev), ABSENT, dtype=np.int64)
    col[units] = step
    parent = ev.get("parent_index").tolist()
    for i in range(len(ev) - 1, -1, -1):
        if col[i] == ABSENT or ev.kind[i] == LEAVE:
            continue
        p = parent[i]
        if p != ABSENT and col[i] > col[p]:
            col[p] = col[i]
    matching = ev.get("matching_index")
    enters = np.flatnonzero(ev.kind == ENTER)
    col[matching[enters]] = col[enters]
    ev.set_derived("logical_step", col)
    ev.set_derived("_step_unit", np.isin(np.arange(len(ev)), units))
    return trace


@dataclass
class Lateness:
    events: AnalysisTable
    per_process: AnalysisTable


def calculate_lateness(trace):
    """Lateness of every step unit: its completion time minus the earliest
    completion time among units sharing its logical step.

    Returns the per-event table and the maximum lateness of each process.
    """
    assign_logical_steps(trace)
    ev = trace.events
    step = ev.get("logical_step")
    units = np.flatnonzero(ev.get("_step_unit"))
    matching = ev.get("matching_index")
    done = np.where(ev.kind[units] == ENTER, matching[units], units)
    t_done = ev.timestamp[done]
    s = step[units]
    best = {}
    for st, t in zip(s.tolist(), t_done.tolist()):
        if st not in best or t < best[st]:
            best[st] = t
    late = np.array([t - best[st] for st, t in zip(s.tolist(), t_done.tolist())], dtype=np.int64)
    col = np.full(len(ev), ABSENT, dtype=np.int64)
    col[units] = late
    ev.set_derived("lateness", col)
    rows = [[int(ev.process[u]), int(ev.thread[u]), ev.name_of(u), int(st), int(t), int(lt)]
            for u, st, t, lt in zip(units.tolist(), s.tolist(), t_done.tolist(), late.tolist())]
    events = AnalysisTable(units.tolist(), ["process", "thread", "name", "step", "end_ts", "lateness"], rows,
                           units={"end_ts": "ns", "lateness": "ns"}, index_name="row")
    procs = np.unique(ev.process)
    peak = np.zeros(len(procs), dtype=np.int64)
    np.maximum.at(peak, np.searchsorted(procs, ev.process[units]), late)
    per_process = AnalysisTable(procs.tolist(), ["max_lateness"], [[int(x)] for x in peak],
                                units={"max_lateness": "ns"}, index_name="process")
    return Lateness(events, per_process)


# ---------------------------------------------------------------------------
# critical path


@dataclass
class PathSegment:
    kind: str  # "local" or "message-hop"
    process: int
    thread: int
    event_row: int
    t_start: int
    t_end: int
    first_row: int = ABSENT
    from_process: int = ABSENT

    @property
    def duration(self):
        return self.t_end - self.t_start


@dataclass
class CriticalPath:
    """Forward-ordered critical path; ``rows`` lists every event visited."""

    segments: list
    rows: list
    truncated: bool = False
    unmatched_row: int = ABSENT
    names: list = field(default_factory=list, repr=False)

    @property
    def t_start(self):
        return self.segments[0].t_start if self.segments else 0

    @property
    def t_end(self):
        return self.segments[-1].t_end if self.segments else 0

    def length(self):
        return sum(s.duration for s in self.segments)

    def processes(self):
        out = []
        for s in self.segments:
            if s.kind == "local" and (not out or out[-1] != s.process):
                out.append(s.process)
        return out

    def hops(self):
        return [s for s in self.segments if s.kind == "message-hop"]

    def to_records(self):
        out = []
        for s in self.segments:
            rec = {"kind": s.kind, "process": s.process, "thread": s.thread, "event_row": s.event_row,
                   "t_start": s.t_start, "t_end": s.t_end}
            if s.kind == "message-hop":
                rec["from_process"] = s.from_process
            else:
                rec["first_row"] = s.first_row
            out.append(rec)
        return out

    def to_json(self):
        doc = {"truncated": self.truncated, "segments": self.to_records(), "rows": self.rows}
        if self.truncated:
            doc["unmatched_row"] = self.unmatched_row
        return json.dumps(doc, indent=2) + "\n"

    def to_table(self):
        recs = self.to_records()
        cols = ["kind", "process", "thread", "event_row", "t_start", "t_end"]
        return AnalysisTable(list(range(len(recs))), cols, [[r[c] for c in cols] for r in recs],
                             units={"t_start": "ns", "t_end": "ns"}, index_name="segment")


def critical_path_analysis(trace):
    """Walk back from the globally last Leave, hopping to the sender whenever a
    matched receive was bound by its message.

    A receive is binding when its send happened strictly later than the
    event preceding the receive on the same stream; ties stay local.  A
    receive without a matched send stops the walk and sets ``truncated``.
    """
    ensure_metrics(trace)
    ev = trace.events
    if len(ev) == 0:
        raise EmptyTrace("empty trace")
    mm = match_messages(trace)
    send_of = {m.recv_row: m.send_row for m in mm.messages}
    unmatched_recv = {m.recv_row for m in mm.unmatched_recvs}
    ts = ev.timestamp
    sid = ev.stream_ids()
    leaves = np.flatnonzero(ev.kind == LEAVE)
    cand = leaves if len(leaves) else np.arange(len(ev))
    last = int(cand[np.lexsort((cand, ts[cand]))[-1]])

    back = [last]
    hop_at = set()  # indices into back where the next step is a message hop
    truncated, unmatched = False, ABSENT
    cur = last
    while True:
        prev = cur - 1 if cur > 0 and sid[cur - 1] == sid[cur] else None
        if cur in send_of:
            s = send_of[cur]
            if prev is None or ts[s] > ts[prev]:
                hop_at.add(len(back) - 1)
                back.append(s)
                cur = s
                continue
        elif cur in unmatched_recv:
            truncated, unmatched = True, cur
            break
        if prev is None:
            break
        back.append(prev)
        cur = prev
    rows = back[::-1]
    n = len(rows)
    hop_fwd = {n - 1 - i for i in hop_at}  # rows[i] is a recv reached from rows[i-1] by a hop

    segments = []
    run_start = 0
    for i in range(1, n + 1):
        if i == n or i in hop_fwd:
            a, b = rows[run_start], rows[i - 1]
            segments.append(PathSegment("local", int(ev.process[a]), int(ev.thread[a]), int(b),
                                        int(ts[a]), int(ts[b]), first_row=int(a)))
            if i < n:
                s, r = rows[i - 1], rows[i]
                segments.append(PathSegment("message-hop", int(ev.process[r]), int(ev.thread[r]), int(r),
                                            int(ts[s]), int(ts[r]), from_process=int(ev.process[s])))
            run_start = i
    return CriticalPath(segments, [int(r) for r in rows], truncated, unmatched, names=ev.names)
