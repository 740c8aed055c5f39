"""Trace file readers and the canonical CSV writer.

Two on-disk formats are supported:

* the canonical CSV format with header
  ``timestamp,event_type,name,process[,thread[,attributes]]`` where
  timestamps are integer nanoseconds and attributes are ``key=value`` pairs
  joined by ``;`` (``\\``, ``;`` and ``=`` inside keys or values are
  backslash-escaped);
* Chrome Trace Event JSON (also produced by the PyTorch profiler).

Point-to-point messages are encoded as ``MpiSend`` / ``MpiRecv`` instant
events carrying ``partner``, ``size`` and ``tag`` attributes.
"""

import csv
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DuplicateProcess, MalformedHeader, MalformedJson, MalformedRow, UnbalancedBE
from .model import EventKind, EventTable, Trace

log = logging.getLogger(__name__)

CSV_COLUMNS = ("timestamp", "event_type", "name", "process", "thread", "attributes")
SEND_NAME = "MpiSend"
RECV_NAME = "MpiRecv"

_KIND_CODES = {"Enter": 0, "Leave": 1, "Instant": 2}
_KIND_LABELS = {0: "Enter", 1: "Leave", 2: "Instant"}


# ---------------------------------------------------------------------------
# attribute encoding


def _split_unescaped(text, sep):
    """Split on ``sep`` characters not preceded by a backslash escape."""
    parts, cur, i, n = [], [], 0, len(text)
    while i < n:
        c = text[i]
        if c == "\\" and i + 1 < n:
            cur.append(text[i:i + 2])
            i += 2
            continue
        if c == sep:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(c)
        i += 1
    parts.append("".join(cur))
    return parts


def _unescape(text):
    out, i, n = [], 0, len(text)
    while i < n:
        c = text[i]
        if c == "\\" and i + 1 < n:
            out.append(text[i + 1])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _typed(raw):
    # an escaped value is always a string; otherwise int, then float, then string
    if "\\" in raw:
        return _unescape(raw)
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_attributes(text):
    """Parse ``k=v;k=v`` into a dict with int/float/str values."""
    if not text:
        return None
    attrs = {}
    if "\\" not in text:
        for item in text.split(";"):
            if not item:
                continue
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"attribute without '=': {item!r}")
            attrs[key] = _typed(raw)
        return attrs or None
    for item in _split_unescaped(text, ";"):
        if not item:
            continue
        kv = _split_unescaped(item, "=")
        if len(kv) < 2:
            raise ValueError(f"attribute without '=': {item!r}")
        key = _unescape(kv[0])
        attrs[key] = _typed("=".join(kv[1:]))
    return attrs or None


def _escape(text):
    return text.replace("\\", "\\\\").replace(";", "\\;").replace("=", "\\=")


def _looks_numeric(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def format_attributes(attrs):
    """Render attrs as ``k=v;k=v`` with keys sorted lexicographically."""
    if not attrs:
        return ""
    parts = []
    for key in sorted(attrs):
        v = attrs[key]
        if isinstance(v, bool):
            v = int(v)
        if isinstance(v, (int, np.integer)):
            text = str(int(v))
        elif isinstance(v, (float, np.floating)):
            text = repr(float(v))
        else:
            text = _escape(str(v))
            if text and "\\" not in text and _looks_numeric(text):
                # force string typing on re-read
                text = "\\" + text
        parts.append(f"{_escape(key)}={text}")
    return ";".join(parts)


# ---------------------------------------------------------------------------
# CSV


def read_csv(path, delimiter=",", strict=False):
    """Read a canonical CSV trace.

    Args:
        path: File path.
        delimiter: Field separator.
        strict: Raise :class:`MalformedRow` on the first bad row instead of
            skipping it.

    Returns:
        Trace: sorted by (process, thread, timestamp); ``metadata`` records
        the source format, path and number of skipped rows.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        ncols = len(header)
        if ncols < 4 or tuple(header) != CSV_COLUMNS[:ncols]:
            raise MalformedHeader(f"{path}: unexpected header {','.join(header)!r}")

        names, name_index = [], {}
        ts, kinds, ids, procs, threads, attrs = [], [], [], [], [], []
        skipped = 0
        kind_codes = _KIND_CODES
        for row in reader:
            if not row:
                continue
            try:
                if len(row) > ncols or len(row) < 4:
                    raise ValueError(f"expected {ncols} fields, got {len(row)}")
                t = int(row[0])
                k = kind_codes[row[1]]
                p = int(row[3])
                th = int(row[4]) if len(row) > 4 and row[4] != "" else 0
                a = parse_attributes(row[5]) if len(row) > 5 else None
                if t < 0 or p < 0 or th < 0:
                    raise ValueError("negative timestamp, process or thread")
            except (ValueError, KeyError) as exc:
                if strict:
                    raise MalformedRow(reader.line_num, str(exc)) from None
                skipped += 1
                continue
            name = row[2]
            nid = name_index.get(name)
            if nid is None:
                nid = name_index[name] = len(names)
                names.append(name)
            ts.append(t)
            kinds.append(k)
            ids.append(nid)
            procs.append(p)
            threads.append(th)
            attrs.append(a)

    table = EventTable(np.array(ts, dtype=np.int64), np.array(kinds, dtype=np.int8),
                       np.array(ids, dtype=np.int32), np.array(procs, dtype=np.int32),
                       np.array(threads, dtype=np.int32), attrs, names)
    meta = {"source_format": "csv", "path": path, "skipped_rows": str(skipped)}
    if skipped:
        log.warning("%s: skipped %d malformed rows", path, skipped)
    return Trace(table, metadata=meta)


def write_csv(trace, path):
    """Write ``trace`` in the canonical CSV format (full header, LF endings)."""
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        fh.write(to_csv_text(trace))


def to_csv_text(trace):
    ev = trace.events if isinstance(trace, Trace) else trace
    lines = [",".join(CSV_COLUMNS)]
    names = ev.names
    ts, kind, nid, proc, thr = (ev.timestamp.tolist(), ev.kind.tolist(), ev.name_id.tolist(),
                                ev.process.tolist(), ev.thread.tolist())
    plain = {}
    for i in range(len(ts)):
        name = names[nid[i]]
        q = plain.get(name)
        if q is None:
            q = plain[name] = _csv_quote(name)
        a = ev.attrs[i]
        attr_text = _csv_quote(format_attributes(a)) if a else ""
        lines.append(f"{ts[i]},{_KIND_LABELS[kind[i]]},{q},{proc[i]},{thr[i]},{attr_text}")
    return "\n".join(lines) + "\n"


def _csv_quote(text):
    if any(c in text for c in ',"\n\r') or text != text.strip():
        return '"' + text.replace('"', '""') + '"'
    return text


# ---------------------------------------------------------------------------
# Chrome trace event format


def _us_to_ns(value):
    """Convert microseconds (int, float or Decimal) to integer ns, rounding half up."""
    if isinstance(value, int):
        return value * 1000
    d = value if isinstance(value, Decimal) else Decimal(str(value))
    return int((d * 1000).to_integral_value(rounding=ROUND_HALF_UP))


def _flatten(obj, prefix, out):
    for key, v in obj.items():
        k = f"{prefix}{key}"
        if isinstance(v, dict):
            _flatten(v, k + ".", out)
        elif isinstance(v, bool):
            out[k] = int(v)
        elif isinstance(v, int):
            out[k] = v
        elif isinstance(v, Decimal):
            out[k] = int(v) if v == v.to_integral_value() and "." not in str(v) and "E" not in str(v).upper() else float(v)
        elif isinstance(v, float):
            out[k] = v
        elif isinstance(v, str):
            out[k] = v
        elif v is None:
            continue
        else:
            out[k] = json.dumps(v, sort_keys=True, default=str)
    return out


def _as_int_id(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int):
        return value
    if isinstance(value, Decimal) and value == value.to_integral_value():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            return zlib.crc32(value.encode()) & 0x7FFFFFFF
    return zlib.crc32(str(value).encode()) & 0x7FFFFFFF


def read_chrome(path, strict=False):
    """Read a Chrome Trace Event JSON file.

    Phases B/E become Enter/Leave, X expands into an Enter/Leave pair, i/I
    become Instant events, s/f flow pairs become MpiSend/MpiRecv instants and
    M events populate process/thread display names.  Other phases are
    skipped and counted in ``metadata["skipped_events"]``.
    """
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"{path}: {exc}") from None
    return parse_chrome(doc, strict=strict, source=path)


def parse_chrome(doc, strict=False, source=""):
    if isinstance(doc, dict):
        events = doc.get("traceEvents")
        if not isinstance(events, list):
            raise MalformedJson(f"{source}: object without a traceEvents array")
    elif isinstance(doc, list):
        events = doc
    else:
        raise MalformedJson(f"{source}: top level must be an array or object")

    meta = {"source_format": "chrome", "path": source}
    pid_map, tid_map = {}, {}

    def pid_of(ev):
        raw = ev.get("pid", 0)
        if isinstance(raw, int) and not isinstance(raw, bool) and raw >= 0:
            return raw
        if raw not in pid_map:
            pid_map[raw] = None
        return raw

    # records: (pid, tid, key, ts_ns, kind, name, attrs); key orders equal timestamps
    records = []
    skipped = 0
    flows = {}
    open_be = {}
    dropped_flows = 0
    for seq, ev in enumerate(events):
        if not isinstance(ev, dict):
            skipped += 1
            continue
        ph = ev.get("ph")
        pid = pid_of(ev)
        tid = ev.get("tid", 0)
        name = str(ev.get("name", ""))
        args = ev.get("args") or {}
        if ph == "M":
            value = args.get("name") if isinstance(args, dict) else None
            if name == "process_name" and value is not None:
                meta[f"process_name.{pid}"] = str(value)
            elif name == "thread_name" and value is not None:
                meta[f"thread_name.{pid}.{tid}"] = str(value)
            continue
        if ph not in ("B", "E", "X", "i", "I", "s", "f"):
            skipped += 1
            continue
        if "ts" not in ev:
            if strict:
                raise MalformedJson(f"{source}: event {seq} lacks ts")
            skipped += 1
            continue
        t = _us_to_ns(ev["ts"])
        attrs = _flatten(args, "", {}) if isinstance(args, dict) and args else None
        if ph == "B":
            records.append((pid, tid, (t, 1, 0, seq, 0), t, EventKind.Enter, name, attrs))
            open_be.setdefault((pid, tid), []).append(name)
        elif ph == "E":
            stack = open_be.get((pid, tid))
            if stack:
                top = stack.pop()
                if "name" not in ev:
                    name = top
            elif strict:
                raise UnbalancedBE(pid, tid)
            records.append((pid, tid, (t, 1, 0, seq, 0), t, EventKind.Leave, name, attrs))
        elif ph == "X":
            end = _us_to_ns(Decimal(str(ev["ts"])) + Decimal(str(ev.get("dur", 0))))
            dur = end - t
            if dur == 0:
                records.append((pid, tid, (t, 2, seq, 0, 0), t, EventKind.Enter, name, attrs))
                records.append((pid, tid, (t, 2, seq, 1, 0), t, EventKind.Leave, name, None))
            else:
                # longer calls open first and close last at shared timestamps
                records.append((pid, tid, (t, 1, -dur, seq, 0), t, EventKind.Enter, name, attrs))
                records.append((pid, tid, (end, 0, -t, -seq, 0), end, EventKind.Leave, name, None))
        elif ph in ("i", "I"):
            records.append((pid, tid, (t, 1, 0, seq, 0), t, EventKind.Instant, name, attrs))
        else:  # flow start / finish
            fid = (ev.get("cat", ""), str(ev.get("id", ev.get("bind_id", ""))))
            flows.setdefault(fid, {}).setdefault(ph, []).append((seq, pid, tid, t, ev))

    if strict:
        for (pid, tid), stack in open_be.items():
            if stack:
                raise UnbalancedBE(pid, tid)

    for fid, sides in flows.items():
        starts = sides.get("s", [])
        finishes = sides.get("f", [])
        for s, f in zip(starts, finishes):
            s_seq, s_pid, s_tid, s_t, s_ev = s
            f_seq, f_pid, f_tid, f_t, f_ev = f
            tag = _as_int_id(s_ev.get("id", f_ev.get("id", 0)))
            size = None
            for side in (s_ev, f_ev):
                a = side.get("args") or {}
                if isinstance(a, dict) and "size" in a:
                    size = int(a["size"])
                    break
            s_attrs = {"partner": f_pid, "tag": tag}
            f_attrs = {"partner": s_pid, "tag": tag}
            if size is not None:
                s_attrs["size"] = size
                f_attrs["size"] = size
            records.append((s_pid, s_tid, (s_t, 1, 0, s_seq, 0), s_t, EventKind.Instant, SEND_NAME, s_attrs))
            records.append((f_pid, f_tid, (f_t, 1, 0, f_seq, 0), f_t, EventKind.Instant, RECV_NAME, f_attrs))
        dropped_flows += abs(len(starts) - len(finishes))

    # non-integer pids/tids get dense ids after the largest integer id
    int_pids = [r[0] for r in records if isinstance(r[0], int) and not isinstance(r[0], bool) and r[0] >= 0]
    next_pid = max(int_pids, default=-1) + 1
    for raw in sorted(pid_map, key=str):
        pid_map[raw] = next_pid
        meta[f"process_alias.{next_pid}"] = str(raw)
        next_pid += 1
    raw_tids = sorted({r[1] for r in records if not (isinstance(r[1], int) and not isinstance(r[1], bool) and r[1] >= 0)}, key=str)
    int_tids = [r[1] for r in records if isinstance(r[1], int) and not isinstance(r[1], bool) and r[1] >= 0]
    next_tid = max(int_tids, default=-1) + 1
    for raw in raw_tids:
        tid_map[raw] = next_tid
        meta[f"thread_alias.{next_tid}"] = str(raw)
        next_tid += 1

    def norm(v, mapping):
        if isinstance(v, int) and not isinstance(v, bool) and v >= 0:
            return v
        return mapping[v]

    fixed = []
    for pid, tid, key, t, kind, name, attrs in records:
        p = norm(pid, pid_map)
        th = norm(tid, tid_map)
        if attrs and "partner" in attrs and name in (SEND_NAME, RECV_NAME):
            attrs["partner"] = norm(attrs["partner"], pid_map)
        fixed.append((p, th, key, t, kind, name, attrs))
    fixed.sort(key=lambda r: (r[0], r[1], r[2]))

    offset = min((r[3] for r in fixed), default=0)
    if offset >= 0:
        offset = 0
    else:
        meta["ts_offset_ns"] = str(-offset)

    table = EventTable.from_records((t - offset, k, name, p, th, a) for p, th, _, t, k, name, a in fixed)
    meta["skipped_events"] = str(skipped)
    meta["dropped_flows"] = str(dropped_flows)
    if skipped:
        log.info("%s: skipped %d events with unsupported phases", source, skipped)
    if dropped_flows:
        log.warning("%s: dropped %d unmatched flow events", source, dropped_flows)
    return Trace(table, metadata=meta)


def to_chrome(trace):
    """Encode a trace as a Chrome Trace Event document (B/E/i phases, ts in µs)."""
    ev = trace.events
    out = []
    for i in range(len(ev)):
        ph = {0: "B", 1: "E", 2: "i"}[int(ev.kind[i])]
        ns = int(ev.timestamp[i])
        ts = ns // 1000 if ns % 1000 == 0 else ns / 1000
        item = {"ph": ph, "name": ev.name_of(i), "pid": int(ev.process[i]), "tid": int(ev.thread[i]), "ts": ts}
        if ev.attrs[i]:
            item["args"] = dict(ev.attrs[i])
        out.append(item)
    return {"traceEvents": out}


# ---------------------------------------------------------------------------
# dispatch and parallel reading


def detect_format(path):
    path = os.fspath(path)
    if path.endswith(".json"):
        return "chrome"
    if path.endswith(".csv"):
        return "csv"
    with open(path, encoding="utf-8") as fh:
        head = fh.read(64).lstrip()
    return "chrome" if head[:1] in ("[", "{") else "csv"


def read_trace(path, format=None, strict=False):
    fmt = format or detect_format(path)
    if fmt == "csv":
        return read_csv(path, strict=strict)
    if fmt == "chrome":
        return read_chrome(path, strict=strict)
    raise ValueError(f"unknown trace format {fmt!r}")


def _read_task(args):
    path, fmt, strict = args
    return read_trace(path, fmt, strict)


def merge_traces(traces, labels=None):
    """Concatenate traces holding disjoint processes into one sorted trace."""
    seen = {}
    for idx, tr in enumerate(traces):
        for p in tr.events.processes().tolist():
            if p in seen:
                raise DuplicateProcess(p)
            seen[p] = idx
    names, index = [], {}
    cols = {k: [] for k in ("ts", "kind", "nid", "proc", "thr")}
    attrs = []
    for tr in traces:
        ev = tr.events
        remap = np.empty(len(ev.names), dtype=np.int32)
        for i, n in enumerate(ev.names):
            j = index.get(n)
            if j is None:
                j = index[n] = len(names)
                names.append(n)
            remap[i] = j
        cols["ts"].append(ev.timestamp)
        cols["kind"].append(ev.kind)
        cols["nid"].append(remap[ev.name_id] if len(ev) else ev.name_id)
        cols["proc"].append(ev.process)
        cols["thr"].append(ev.thread)
        attrs.extend(ev.attrs)
    cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in cols.items()}
    table = EventTable(cat["ts"], cat["kind"], cat["nid"], cat["proc"], cat["thr"], attrs, names)
    meta = {"source_format": "+".join(sorted({t.metadata.get("source_format", "?") for t in traces})),
            "path": ";".join(t.metadata.get("path", "") for t in traces)}
    for key in ("skipped_rows", "skipped_events", "dropped_flows"):
        vals = [int(t.metadata[key]) for t in traces if key in t.metadata]
        if vals:
            meta[key] = str(sum(vals))
    return Trace(table, metadata=meta)


def read_parallel(paths, format=None, workers=None, strict=False):
    """Read per-process trace files, optionally on several worker processes.

    The merged trace does not depend on ``workers`` or on the order in which
    files finish parsing.

    Raises:
        DuplicateProcess: two files hold events of the same rank.
    """
    paths = [os.fspath(p) for p in paths]
    if workers is None:
        workers = int(os.environ.get("TRACE_WORKERS", "1"))
    workers = max(1, int(workers))
    tasks = [(p, format, strict) for p in paths]
    if workers == 1 or len(paths) == 1:
        traces = [_read_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(paths))) as pool:
            traces = list(pool.map(_read_task, tasks))
    if len(traces) == 1:
        return traces[0]
    return merge_traces(traces)
