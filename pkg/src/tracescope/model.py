"""In-memory trace representation.

Events live in a column store (one numpy array per field) sorted by
``(process, thread, timestamp)``.  Derived columns such as the matching
index or inclusive time are materialized lazily by the analysis modules and
cached on the table.
"""

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTrace

ABSENT = -1


class EventKind(enum.IntEnum):
    Enter = 0
    Leave = 1
    Instant = 2


KIND_NAMES = {k.name: k for k in EventKind}

DERIVED_COLUMNS = ("matching_index", "parent_index", "depth", "cct_node_id", "inc_ns", "exc_ns")


class EventTable:
    """Column-oriented store of trace events.

    Base columns are ``timestamp`` (int64 ns), ``kind`` (int8, see
    :class:`EventKind`), ``name_id`` (int32 into ``names``), ``process`` and
    ``thread`` (int32) plus ``attrs``, a list holding a dict or ``None`` per
    row.  Base columns are never modified after construction.
    """

    def __init__(self, timestamp, kind, name_id, process, thread, attrs, names):
        self.timestamp = np.ascontiguousarray(timestamp, dtype=np.int64)
        self.kind = np.ascontiguousarray(kind, dtype=np.int8)
        self.name_id = np.ascontiguousarray(name_id, dtype=np.int32)
        self.process = np.ascontiguousarray(process, dtype=np.int32)
        self.thread = np.ascontiguousarray(thread, dtype=np.int32)
        self.attrs = list(attrs) if attrs is not None else [None] * len(self.timestamp)
        self.names = list(names)
        self._name_index = {n: i for i, n in enumerate(self.names)}
        self._derived = {}
        n = len(self.timestamp)
        for col in (self.kind, self.name_id, self.process, self.thread):
            if len(col) != n:
                raise ValueError("column lengths differ")
        if len(self.attrs) != n:
            raise ValueError("attrs length differs from event count")
        if n and self.timestamp.min() < 0:
            raise ValueError("timestamps must be non-negative")
        for arr in (self.timestamp, self.kind, self.name_id, self.process, self.thread):
            arr.flags.writeable = False

    @classmethod
    def from_records(cls, records, names=None):
        """Build a table from ``(ts, kind, name, process, thread, attrs)`` tuples."""
        names = list(names or [])
        index = {n: i for i, n in enumerate(names)}
        ts, kinds, ids, procs, threads, attrs = [], [], [], [], [], []
        for t, k, name, p, th, a in records:
            nid = index.get(name)
            if nid is None:
                nid = index[name] = len(names)
                names.append(name)
            ts.append(int(t))
            kinds.append(int(EventKind[k] if isinstance(k, str) else k))
            ids.append(nid)
            procs.append(int(p))
            threads.append(int(th))
            attrs.append(dict(a) if a else None)
        return cls(ts, kinds, ids, procs, threads, attrs, names)

    @classmethod
    def empty(cls):
        return cls([], [], [], [], [], [], [])

    def __len__(self):
        return len(self.timestamp)

    def __repr__(self):
        return f"<EventTable N={len(self)} names={len(self.names)}>"

    # -- strings ---------------------------------------------------------

    def name_of(self, row):
        return self.names[self.name_id[row]]

    def lookup(self, name):
        """Return the interned id of ``name`` or ``None``."""
        return self._name_index.get(name)

    @property
    def name(self):
        """Object array with the resolved function name of every row."""
        cached = self._derived.get("_name")
        if cached is None:
            cached = np.asarray(self.names, dtype=object)[self.name_id] if len(self) else np.array([], dtype=object)
            self._derived["_name"] = cached
        return cached

    def attr(self, row, key, default=None):
        a = self.attrs[row]
        if a is None:
            return default
        return a.get(key, default)

    # -- derived columns -------------------------------------------------

    def has(self, column):
        return column in self._derived

    def get(self, column):
        return self._derived[column]

    def set_derived(self, column, values):
        arr = np.asarray(values)
        if len(arr) != len(self):
            raise ValueError(f"derived column {column!r} has wrong length")
        arr.flags.writeable = False
        self._derived[column] = arr

    def drop_derived(self):
        self._derived.clear()

    def derived_columns(self):
        return sorted(k for k in self._derived if not k.startswith("_"))

    # -- structure -------------------------------------------------------

    def take(self, rows):
        """New table holding ``rows`` (in the given order); derived columns are not carried."""
        rows = np.asarray(rows, dtype=np.int64)
        return EventTable(
            self.timestamp[rows], self.kind[rows], self.name_id[rows], self.process[rows],
            self.thread[rows], [self.attrs[i] for i in rows], self.names,
        )

    def is_sorted(self):
        if len(self) < 2:
            return True
        p, t, ts = self.process, self.thread, self.timestamp
        dp = np.diff(p)
        dt = np.diff(t)
        dts = np.diff(ts)
        ok = (dp > 0) | ((dp == 0) & ((dt > 0) | ((dt == 0) & (dts >= 0))))
        return bool(ok.all())

    def streams(self):
        """Yield ``(process, thread, start, stop)`` row ranges of each stream."""
        n = len(self)
        if n == 0:
            return
        change = np.flatnonzero((np.diff(self.process) != 0) | (np.diff(self.thread) != 0)) + 1
        bounds = np.concatenate(([0], change, [n]))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            yield int(self.process[lo]), int(self.thread[lo]), int(lo), int(hi)

    def stream_ids(self):
        """Per-row integer id of the (process, thread) stream, numbered in row order."""
        n = len(self)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        change = (np.diff(self.process) != 0) | (np.diff(self.thread) != 0)
        return np.concatenate(([0], np.cumsum(change)))

    def processes(self):
        return np.unique(self.process)

    def canonical_names(self):
        """Resolved names per row, for equality checks independent of interning order."""
        return [self.names[i] for i in self.name_id]

    def equals(self, other):
        """Base-column equality (names compared after resolution)."""
        if len(self) != len(other):
            return False
        for a, b in ((self.timestamp, other.timestamp), (self.kind, other.kind),
                     (self.process, other.process), (self.thread, other.thread)):
            if not np.array_equal(a, b):
                return False
        if self.canonical_names() != other.canonical_names():
            return False
        return [a or {} for a in self.attrs] == [b or {} for b in other.attrs]

    def __eq__(self, other):
        if not isinstance(other, EventTable):
            return NotImplemented
        return self.equals(other)

    __hash__ = None


def sort_events(events):
    """Order rows by (process, thread, timestamp), stable on input order."""
    if events.is_sorted():
        return events
    order = np.lexsort((events.timestamp, events.thread, events.process))
    return events.take(order)


@dataclass
class CctNode:
    node_id: int
    name_id: int
    parent_id: int = ABSENT
    child_ids: list = field(default_factory=list)


class Cct:
    """Calling context tree; a forest whose roots are the distinct top-level functions."""

    def __init__(self):
        self.nodes = []
        self.roots = []
        self._index = {}

    def __len__(self):
        return len(self.nodes)

    def child(self, parent_id, name_id):
        """Return the node for ``name_id`` under ``parent_id``, creating it if needed."""
        key = (parent_id, name_id)
        nid = self._index.get(key)
        if nid is not None:
            return nid
        nid = len(self.nodes)
        self.nodes.append(CctNode(nid, name_id, parent_id))
        self._index[key] = nid
        if parent_id == ABSENT:
            self.roots.append(nid)
        else:
            self.nodes[parent_id].child_ids.append(nid)
        return nid

    def path(self, node_id):
        path = []
        while node_id != ABSENT:
            node = self.nodes[node_id]
            path.append(node.name_id)
            node_id = node.parent_id
        return path[::-1]

    def to_records(self, names):
        return [
            {"node_id": int(n.node_id), "name": names[n.name_id],
             "parent": None if n.parent_id == ABSENT else int(n.parent_id)}
            for n in self.nodes
        ]

    def to_json(self, names):
        return json.dumps(self.to_records(names), indent=2) + "\n"

    def to_text(self, names):
        lines = []

        def visit(nid, depth):
            lines.append("  " * depth + names[self.nodes[nid].name_id])
            for c in self.nodes[nid].child_ids:
                visit(c, depth + 1)

        for r in self.roots:
            visit(r, 0)
        return "\n".join(lines) + ("\n" if lines else "")


class Trace:
    """A trace dataset: an event table, an optional CCT and string metadata."""

    def __init__(self, events, cct=None, metadata=None):
        self.events = sort_events(events)
        self.cct = cct
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.events)

    def __repr__(self):
        src = self.metadata.get("source_format", "?")
        return f"<Trace N={len(self.events)} processes={len(self.events.processes())} source={src}>"

    def time_span(self):
        return time_span(self)

    def num_processes(self):
        return len(self.events.processes())

    # convenience entry points mirroring the module-level analyses

    def match_caller_callee(self, strict=False):
        from .callgraph import match_caller_callee
        return match_caller_callee(self, strict=strict)

    def create_cct(self):
        from .callgraph import create_cct
        return create_cct(self)

    def flat_profile(self, **kwargs):
        from .profiles import flat_profile
        return flat_profile(self, **kwargs)

    def time_profile(self, bins=100, **kwargs):
        from .profiles import time_profile
        return time_profile(self, bins, **kwargs)

    def comm_matrix(self, output="size"):
        from .comm import comm_matrix
        return comm_matrix(self, output)

    def filter(self, expr, **kwargs):
        from .query import filter_trace
        return filter_trace(self, expr, **kwargs)


def time_span(trace):
    """Return ``(t_min, t_max)`` over all events."""
    ev = trace.events if isinstance(trace, Trace) else trace
    if len(ev) == 0:
        raise EmptyTrace("trace has no events")
    return int(ev.timestamp.min()), int(ev.timestamp.max())


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    return value


class AnalysisTable:
    """Labeled 2-D result returned by aggregations.

    ``cells[i][j]`` is the value for ``row_labels[i]`` and
    ``column_labels[j]``.  Values are plain Python ints, floats or strings so
    emitted CSV/JSON reproduces them exactly.
    """

    def __init__(self, row_labels, column_labels, cells, units=None, index_name="row"):
        self.row_labels = [_plain(r) for r in row_labels]
        self.column_labels = [str(c) for c in column_labels]
        self.cells = [[_plain(v) for v in row] for row in cells]
        self.units = dict(units or {})
        self.index_name = index_name
        width = len(self.column_labels)
        if len(self.cells) != len(self.row_labels):
            raise ValueError("cells and row labels differ in length")
        for row in self.cells:
            if len(row) != width:
                raise ValueError("AnalysisTable must be rectangular")

    @property
    def shape(self):
        return len(self.row_labels), len(self.column_labels)

    def __repr__(self):
        return f"<AnalysisTable {self.shape[0]}x{self.shape[1]} index={self.index_name}>"

    def __eq__(self, other):
        if not isinstance(other, AnalysisTable):
            return NotImplemented
        return (self.row_labels == other.row_labels and self.column_labels == other.column_labels
                and self.cells == other.cells)

    __hash__ = None

    def column(self, label):
        j = self.column_labels.index(str(label))
        return [row[j] for row in self.cells]

    def row(self, label):
        i = self.row_labels.index(label)
        return dict(zip(self.column_labels, self.cells[i]))

    def cell(self, row_label, column_label):
        return self.row(row_label)[str(column_label)]

    def to_numpy(self):
        return np.array(self.cells, dtype=float).reshape(self.shape)

    def head(self, k):
        return AnalysisTable(self.row_labels[:k], self.column_labels, self.cells[:k], self.units, self.index_name)

    def tail(self, k):
        k = min(k, len(self.row_labels))
        lo = len(self.row_labels) - k
        return AnalysisTable(self.row_labels[lo:], self.column_labels, self.cells[lo:], self.units, self.index_name)

    def to_records(self):
        return [dict([(self.index_name, r)] + list(zip(self.column_labels, row)))
                for r, row in zip(self.row_labels, self.cells)]

    def to_json(self):
        return json.dumps(self.to_records(), indent=2, allow_nan=False, default=_json_default) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.index_name] + self.column_labels)
        for r, row in zip(self.row_labels, self.cells):
            w.writerow([_csv_cell(r)] + [_csv_cell(v) for v in row])
        return buf.getvalue()

    def to_text(self):
        header = [self.index_name] + [
            f"{c} [{self.units[c]}]" if c in self.units else c for c in self.column_labels
        ]
        rows = [[_text_cell(r)] + [_text_cell(v) for v in row] for r, row in zip(self.row_labels, self.cells)]
        widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
        out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
        for r in rows:
            out.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        return "\n".join(out) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _text_cell(v):
    if isinstance(v, float):
        if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
            return f"{v:.1f}"
        return f"{v:.6g}"
    return str(v)
