"""Compound event filters and multi-run comparison.

Filters are trees of :class:`Atom` leaves combined with :class:`And`,
:class:`Or` and :class:`Not` (also spelled ``&``, ``|`` and ``~``)::

    expr = Atom("name", "==", "MPI_Recv") & Atom("process", "in", {0, 4})
    reduced = filter_trace(trace, expr)

:func:`parse_filter` reads the same trees from text, e.g.
``name == "MPI_Recv" && process in [0,4] && time between [1e9, 2e9]``.
"""

import fnmatch
import re
from dataclasses import dataclass

import numpy as np

from .callgraph import ENTER, INSTANT, LEAVE, match_caller_callee
from .errors import BadExpr, TooFewRuns
from .model import ABSENT, AnalysisTable, EventKind, EventTable, Trace
from .profiles import flat_profile

FIELDS = ("name", "process", "thread", "timestamp", "event_type")
OPS = ("==", "!=", "<", "<=", ">", ">=", "in", "between", "glob")
_CMP = {"==": np.equal, "!=": np.not_equal, "<": np.less, "<=": np.less_equal,
        ">": np.greater, ">=": np.greater_equal}


class FilterExpr:
    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __invert__(self):
        return Not(self)


@dataclass(frozen=True)
class Atom(FilterExpr):
    field: str
    op: str
    operand: object

    def validate(self):
        if not (self.field in FIELDS or self.field.startswith("attr:")):
            raise BadExpr(f"unknown field {self.field!r}")
        if self.op not in OPS:
            raise BadExpr(f"unknown operator {self.op!r}")
        if self.op == "in" and not isinstance(self.operand, (list, tuple, set, frozenset)):
            raise BadExpr("'in' needs a collection operand")
        if self.op == "between":
            if not isinstance(self.operand, (list, tuple)) or len(self.operand) != 2:
                raise BadExpr("'between' needs a (lo, hi) operand")
        if self.op == "glob" and not isinstance(self.operand, str):
            raise BadExpr("'glob' needs a string pattern")

    @property
    def is_time_window(self):
        return self.field == "timestamp" and self.op == "between"


@dataclass(frozen=True)
class And(FilterExpr):
    left: FilterExpr
    right: FilterExpr


@dataclass(frozen=True)
class Or(FilterExpr):
    left: FilterExpr
    right: FilterExpr


@dataclass(frozen=True)
class Not(FilterExpr):
    expr: FilterExpr


def _walk(expr):
    if isinstance(expr, Atom):
        yield expr
    elif isinstance(expr, (And, Or)):
        yield from _walk(expr.left)
        yield from _walk(expr.right)
    elif isinstance(expr, Not):
        yield from _walk(expr.expr)
    else:
        raise BadExpr(f"not a filter expression: {expr!r}")


def validate(expr):
    for atom in _walk(expr):
        atom.validate()
    return expr


# ---------------------------------------------------------------------------
# evaluation


def _column(events, fld):
    if fld == "name":
        return events.name
    if fld == "process":
        return events.process
    if fld == "thread":
        return events.thread
    if fld == "timestamp":
        return events.timestamp
    if fld == "event_type":
        return np.array([k.name for k in EventKind], dtype=object)[events.kind]
    raise BadExpr(f"unknown field {fld!r}")


def _safe_cmp(op, values, operand):
    out = np.zeros(len(values), dtype=bool)
    for i, v in enumerate(values):
        if v is None:
            continue
        try:
            out[i] = bool(_CMP[op](v, operand)) if op in _CMP else False
        except TypeError:
            out[i] = False
    return out


def _eval_atom(atom, events, intervals):
    if atom.field.startswith("attr:"):
        key = atom.field[5:]
        values = np.array([a.get(key) if a else None for a in events.attrs], dtype=object)
    else:
        values = _column(events, atom.field)
    op, rhs = atom.op, atom.operand
    if atom.is_time_window and intervals is not None:
        lo, hi = rhs
        start, end = intervals
        point = start == end
        return np.where(point, (start >= lo) & (start < hi), (start < hi) & (end > lo))
    if op == "in":
        members = set(rhs)
        return np.array([v in members for v in values.tolist()], dtype=bool)
    if op == "between":
        lo, hi = rhs
        return _safe_cmp(">=", values, lo) & _safe_cmp("<", values, hi)
    if op == "glob":
        return np.array([isinstance(v, str) and fnmatch.fnmatchcase(v, rhs) for v in values.tolist()], dtype=bool)
    if values.dtype != object:
        try:
            return np.asarray(_CMP[op](values, rhs), dtype=bool)
        except (TypeError, ValueError):
            pass
    return _safe_cmp(op, values, rhs)


def evaluate(expr, events, intervals=None):
    """Boolean mask of rows satisfying ``expr``; missing attributes compare false."""
    if isinstance(expr, Atom):
        expr.validate()
        return _eval_atom(expr, events, intervals)
    if isinstance(expr, And):
        return evaluate(expr.left, events, intervals) & evaluate(expr.right, events, intervals)
    if isinstance(expr, Or):
        return evaluate(expr.left, events, intervals) | evaluate(expr.right, events, intervals)
    if isinstance(expr, Not):
        return ~evaluate(expr.expr, events, intervals)
    raise BadExpr(f"not a filter expression: {expr!r}")


def _row_intervals(trace):
    """Per-row (start, end): the call's inclusive interval for Enter/Leave rows, a point for instants."""
    match_caller_callee(trace)
    ev = trace.events
    matching = ev.get("matching_index")
    start = ev.timestamp.copy()
    end = ev.timestamp.copy()
    enter = ev.kind == ENTER
    leave = ev.kind == LEAVE
    paired = matching != ABSENT
    end[enter & paired] = ev.timestamp[matching[enter & paired]]
    start[leave & paired] = ev.timestamp[matching[leave & paired]]
    return start, end


def filter_trace(trace, expr, pair_preserving=True, time_clip=False):
    """Return a new Trace holding the events that satisfy ``expr``.

    Args:
        trace: Source trace; it is never modified.
        expr: FilterExpr tree.
        pair_preserving: Keep both rows of an Enter/Leave pair when either
            one matches.
        time_clip: Clip calls retained by a ``timestamp between`` atom to
            the window (the hull of all such windows) and flag them with
            ``clipped=1``.

    Time windows ``[lo, hi)`` keep every call whose inclusive interval
    intersects the window.
    """
    validate(expr)
    atoms = list(_walk(expr))
    windows = [a.operand for a in atoms if a.is_time_window]
    ev = trace.events
    intervals = None
    if windows or pair_preserving:
        # matching on a private copy so the source trace keeps its state
        work = Trace(ev.take(np.arange(len(ev))), metadata=trace.metadata) if not ev.has("matching_index") else trace
        match_caller_callee(work)
        ev = work.events
        intervals = _row_intervals(work) if windows else None
    mask = evaluate(expr, ev, intervals)
    if pair_preserving:
        matching = ev.get("matching_index")
        paired = (matching != ABSENT) & mask
        mask = mask.copy()
        mask[matching[paired]] = True
    rows = np.flatnonzero(mask)
    out = ev.take(rows)
    if time_clip and windows:
        lo = min(w[0] for w in windows)
        hi = max(w[1] for w in windows)
        ts = out.timestamp.copy()
        attrs = list(out.attrs)
        clipped = (ts < lo) | (ts > hi)
        for i in np.flatnonzero(clipped).tolist():
            ts[i] = min(max(ts[i], lo), hi)
            a = dict(attrs[i] or {})
            a["clipped"] = 1
            attrs[i] = a
        out = EventTable(ts, out.kind, out.name_id, out.process, out.thread, attrs, out.names)
    meta = dict(trace.metadata)
    meta["filtered_from"] = str(len(trace.events))
    return Trace(out, metadata=meta)


# ---------------------------------------------------------------------------
# text syntax

_TOKEN = re.compile(r"""
    \s*(?:
      (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
    | (?P<num>-?\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)
    | (?P<op>&&|\|\||==|!=|<=|>=|<|>|!|\(|\)|\[|\]|,|:)
    | (?P<word>[A-Za-z_][A-Za-z0-9_.:]*)
    )""", re.VERBOSE)

_FIELD_ALIASES = {"time": "timestamp", "ts": "timestamp", "type": "event_type", "rank": "process",
                  "proc": "process"}


def _tokenize(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise BadExpr(f"unexpected input at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        val = m.group(kind)
        if kind == "str":
            val = re.sub(r"\\(.)", r"\1", val[1:-1])
        elif kind == "num":
            f = float(val)
            val = int(f) if f.is_integer() and abs(f) < 2 ** 63 else f
        out.append((kind, val))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, expect=None):
        tok = self.peek()
        if tok[0] is None:
            raise BadExpr("unexpected end of filter expression")
        if expect is not None and tok[1] != expect:
            raise BadExpr(f"expected {expect!r}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        expr = self.or_expr()
        if self.i != len(self.toks):
            raise BadExpr(f"trailing input: {self.toks[self.i][1]!r}")
        return expr

    def or_expr(self):
        left = self.and_expr()
        while self.peek() in (("op", "||"), ("word", "or")):
            self.take()
            left = Or(left, self.and_expr())
        return left

    def and_expr(self):
        left = self.unary()
        while self.peek() in (("op", "&&"), ("word", "and")):
            self.take()
            left = And(left, self.unary())
        return left

    def unary(self):
        if self.peek() in (("op", "!"), ("word", "not")):
            self.take()
            return Not(self.unary())
        if self.peek() == ("op", "("):
            self.take()
            e = self.or_expr()
            self.take(")")
            return e
        return self.atom()

    def value(self):
        kind, val = self.take()
        if kind in ("str", "num"):
            return val
        if kind == "word":
            return val
        raise BadExpr(f"expected a value, got {val!r}")

    def listing(self):
        self.take("[")
        items = []
        if self.peek() != ("op", "]"):
            items.append(self.value())
            while self.peek() == ("op", ","):
                self.take()
                items.append(self.value())
        self.take("]")
        return items

    def atom(self):
        kind, fld = self.take()
        if kind != "word":
            raise BadExpr(f"expected a field name, got {fld!r}")
        if fld.startswith("attr.") or fld.startswith("attr:"):
            fld = "attr:" + fld[5:]
        else:
            fld = _FIELD_ALIASES.get(fld, fld)
        kind, op = self.take()
        if op == "in":
            return validate(Atom(fld, "in", tuple(self.listing())))
        if op == "between":
            items = self.listing()
            if len(items) != 2:
                raise BadExpr("'between' takes [lo, hi]")
            return validate(Atom(fld, "between", tuple(items)))
        if op in ("glob", "like", "matches"):
            return validate(Atom(fld, "glob", self.value()))
        if op in _CMP:
            return validate(Atom(fld, op, self.value()))
        raise BadExpr(f"unknown operator {op!r}")


def parse_filter(text):
    """Parse the textual filter language into a FilterExpr tree.

    Grammar (``&&``/``and`` binds tighter than ``||``/``or``)::

        expr  := term (('||' | 'or') term)*
        term  := unary (('&&' | 'and') unary)*
        unary := ('!' | 'not') unary | '(' expr ')' | atom
        atom  := FIELD OP value | FIELD 'in' '[' values ']'
               | FIELD 'between' '[' lo ',' hi ']' | FIELD 'glob' "pattern"
        FIELD := name | process | thread | time | event_type | attr.KEY
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# multiple runs


def multi_run_analysis(traces, metric="exc_ns", labels=None):
    """Flat profile of every run side by side: functions x runs.

    Columns are labelled by ``labels`` or by each run's process count; a
    function missing from a run is 0 there.  Rows are ordered by their
    largest value across runs, descending.
    """
    traces = list(traces)
    if len(traces) < 2:
        raise TooFewRuns("multi_run_analysis needs at least two traces")
    if labels is None:
        labels = [str(t.num_processes()) for t in traces]
    labels = _unique_labels([str(x) for x in labels])
    profiles = [flat_profile(t, metric=metric) for t in traces]
    values = [dict(zip(p.row_labels, p.column(metric))) for p in profiles]
    names = sorted({n for v in values for n in v})
    rows = [[v.get(n, 0) for v in values] for n in names]
    order = sorted(range(len(names)), key=lambda i: (-max(rows[i]), names[i]))
    return AnalysisTable([names[i] for i in order], labels, [rows[i] for i in order],
                         units={c: "ns" if metric.endswith("_ns") else "" for c in labels}, index_name="name")


def _unique_labels(labels):
    seen = {}
    out = []
    for lab in labels:
        if lab in seen:
            seen[lab] += 1
            out.append(f"{lab} ({seen[lab]})")
        else:
            seen[lab] = 1
            out.append(lab)
    return out
