"""Independent slow reference implementations the library is checked against.

These work on plain Python lists built from the base columns and share no
code with the library beyond reading the event table.
"""

import math
from collections import defaultdict

ENTER, LEAVE, INSTANT = 0, 1, 2


def rows_of(trace):
    ev = trace.events
    return [(int(ev.timestamp[i]), int(ev.kind[i]), ev.name_of(i), int(ev.process[i]), int(ev.thread[i]))
            for i in range(len(ev))]


def pushdown_replay(trace):
    """Matching, depth and parent per row by replaying one stack per stream."""
    rows = rows_of(trace)
    n = len(rows)
    matching, depth, parent = [-1] * n, [-1] * n, [-1] * n
    stacks = defaultdict(list)
    for i, (t, k, name, p, th) in enumerate(rows):
        st = stacks[(p, th)]
        if k == ENTER:
            depth[i] = len(st)
            parent[i] = st[-1] if st else -1
            st.append(i)
        elif k == LEAVE:
            j = st.pop()
            assert rows[j][2] == name
            matching[i], matching[j] = j, i
            depth[i], parent[i] = depth[j], parent[j]
        else:
            depth[i] = len(st)
            parent[i] = st[-1] if st else -1
    return matching, depth, parent


def calls(trace):
    """List of (row, name, process, thread, start, end, parent_row) from the replay."""
    rows = rows_of(trace)
    matching, _, parent = pushdown_replay(trace)
    return [(i, r[2], r[3], r[4], r[0], rows[matching[i]][0], parent[i])
            for i, r in enumerate(rows) if r[1] == ENTER]


def exclusive_by_subtraction(trace):
    """Exclusive time per Enter row: own interval minus the children's intervals."""
    cs = calls(trace)
    kids = defaultdict(list)
    for c in cs:
        if c[6] != -1:
            kids[c[6]].append((c[4], c[5]))
    out = {}
    for row, _, _, _, s, e, _ in cs:
        covered = set()
        for a, b in kids[row]:
            covered.update(range(a, b))
        out[row] = len(set(range(s, e)) - covered)
    return out


def occupancy_profile(trace, edges):
    """Per bin and function, count nanoseconds owned exclusively by that function.

    Nanosecond ``t`` of a stream belongs to the innermost call open over
    ``[t, t+1)``.  Bins are half-open by nanosecond; the upper edge of the
    last bin carries no nanoseconds of its own.
    """
    cs = calls(trace)
    by_stream = defaultdict(list)
    for c in cs:
        by_stream[(c[2], c[3])].append(c)
    out = defaultdict(int)
    nb = len(edges) - 1
    for clist in by_stream.values():
        owner = {}
        # deeper calls start later or at the same time; sort by nesting to let children overwrite parents
        for row, name, _, _, s, e, _ in sorted(clist, key=lambda c: (c[4], -c[5], c[0])):
            for t in range(s, e):
                owner[t] = name
        for t, name in owner.items():
            b = 0
            while b < nb - 1 and t >= edges[b + 1]:
                b += 1
            out[(b, name)] += 1
    return out


def brute_matrix_profile(series, m, excl=None):
    """O(n^2 m) nearest-neighbour distances between z-normalized windows."""
    excl = math.ceil(m / 2) if excl is None else excl
    n = len(series) - m + 1
    wins = []
    for i in range(n):
        w = series[i:i + m]
        mu = sum(w) / m
        sd = math.sqrt(sum((x - mu) ** 2 for x in w) / m)
        if max(w) == min(w):
            wins.append(None)
        else:
            wins.append([(x - mu) / sd for x in w])
    prof = []
    for i in range(n):
        best = math.inf
        for j in range(n):
            if abs(i - j) <= excl:
                continue
            a, b = wins[i], wins[j]
            if a is None and b is None:
                d = 0.0
            elif a is None or b is None:
                d = math.sqrt(m)
            else:
                d = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
            best = min(best, d)
        prof.append(best)
    return prof


def message_pairs(trace):
    """FIFO-matched (send_row, recv_row) pairs per (sender, receiver, tag) channel."""
    ev = trace.events
    sends, recvs = defaultdict(list), defaultdict(list)
    for i in range(len(ev)):
        if ev.kind[i] != INSTANT:
            continue
        a = ev.attrs[i] or {}
        if ev.name_of(i) == "MpiSend":
            sends[(int(ev.process[i]), int(a["partner"]), int(a.get("tag", 0)))].append((int(ev.timestamp[i]), i))
        elif ev.name_of(i) == "MpiRecv":
            recvs[(int(a["partner"]), int(ev.process[i]), int(a.get("tag", 0)))].append((int(ev.timestamp[i]), i))
    pairs = []
    for key in sends:
        for (_, s), (_, r) in zip(sorted(sends[key]), sorted(recvs.get(key, []))):
            pairs.append((s, r))
    return pairs


def step_longest_path(trace):
    """Logical step of each unit row as the longest path in the happens-before DAG.

    Units are leaf calls (completing at their Leave) and message instants.
    Edges join consecutive units of a stream in completion order and each
    send to its receive.  The step of a unit is the number of edges on the
    longest path ending at it, found by memoized recursion.
    """
    rows = rows_of(trace)
    matching, _, parent = pushdown_replay(trace)
    has_child = {parent[i] for i, r in enumerate(rows) if r[1] == ENTER and parent[i] != -1}
    units = []
    for i, r in enumerate(rows):
        if r[1] == ENTER and i not in has_child:
            units.append((matching[i], i))
        elif r[1] == INSTANT and r[2] in ("MpiSend", "MpiRecv"):
            units.append((i, i))
    units.sort()
    preds = defaultdict(list)
    last = {}
    for done, u in units:
        key = (rows[done][3], rows[done][4])
        if key in last:
            preds[u].append(last[key])
        last[key] = u
    for s, r in message_pairs(trace):
        preds[r].append(s)
    memo = {}

    def step(u):
        if u not in memo:
            memo[u] = max((step(v) + 1 for v in preds[u]), default=0)
        return memo[u]

    return {u: step(u) for _, u in units}


def critical_path_by_enumeration(trace):
    """Row sequence of the critical path found by enumerating every DAG path.

    Nodes are events; edges join consecutive events of a stream and every
    matched send to its receive.  Every path ends at the globally last
    Leave (latest timestamp, highest row on ties).  Edge weight is the
    timestamp difference, so a path's length is its wall-clock extent.
    Among paths of maximal length the one with the least waiting slack
    wins, where a step into a receive contributes how much earlier its
    chosen predecessor happened than the latest predecessor.  Remaining
    ties prefer staying on the local stream, nearest the end first.
    """
    ev = trace.events
    n = len(ev)
    ts = [int(x) for x in ev.timestamp]
    stream = list(zip(ev.process.tolist(), ev.thread.tolist()))
    preds = defaultdict(list)  # (pred, is_hop)
    for i in range(1, n):
        if stream[i] == stream[i - 1]:
            preds[i].append((i - 1, 0))
    for s, r in message_pairs(trace):
        preds[r].append((s, 1))
    leaves = [i for i in range(n) if ev.kind[i] == LEAVE] or list(range(n))
    sink = max(leaves, key=lambda i: (ts[i], i))

    best = None

    def walk(node, path, slack, choices):
        nonlocal best
        ps = preds[node]
        if not ps:
            key = (-(ts[sink] - ts[node]), slack, tuple(choices))
            if best is None or key < best[0]:
                best = (key, path[::-1])
            return
        latest = max(ts[p] for p, _ in ps)
        for p, hop in ps:
            walk(p, path + [p], slack + (latest - ts[p]), choices + [hop])

    walk(sink, [sink], 0, [])
    return best[1]



def brute_matrix_profile_np(series, m, excl=None):
    """Same definition as :func:`brute_matrix_profile`, vectorized over one side.

    Every pair of explicitly z-normalized windows is compared by direct
    differencing, still O(n^2 m) work.
    """
    import numpy as np

    x = np.asarray(series, dtype=float)
    excl = math.ceil(m / 2) if excl is None else excl
    n = len(x) - m + 1
    wins = np.array([x[i:i + m] for i in range(n)])
    mu = wins.mean(axis=1, keepdims=True)
    sd = np.sqrt(((wins - mu) ** 2).mean(axis=1, keepdims=True))
    const = (wins.max(axis=1) == wins.min(axis=1))
    z = np.where(const[:, None], 0.0, (wins - mu) / np.where(sd == 0, 1.0, sd))
    idx = np.arange(n)
    prof = np.empty(n)
    for i in range(n):
        d = np.sqrt(((z - z[i]) ** 2).sum(axis=1))
        d[const & const[i]] = 0.0
        d[const ^ const[i]] = math.sqrt(m)
        d[np.abs(idx - i) <= excl] = np.inf
        prof[i] = d.min()
    return prof
