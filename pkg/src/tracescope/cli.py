"""Command-line front end: one subcommand per analysis, one emitter per run."""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import comm, diagnostics, patterns, profiles, query, readers, render
from .callgraph import create_cct, match_caller_callee
from .errors import TraceError
from .model import AnalysisTable, _json_default

log = logging.getLogger("tracescope")

FORMATS = ("csv", "json", "svg", "text")
_EXT_FORMAT = {".csv": "csv", ".json": "json", ".svg": "svg", ".txt": "text"}


class UsageError(Exception):
    """Bad flag combination detected after argument parsing."""


def trace_summary(trace):
    """Event, process and thread counts, time span, metadata and the CCT."""
    match_caller_callee(trace)
    cct = create_cct(trace)
    ev = trace.events
    lo, hi = trace.time_span()
    return {
        "events": len(ev),
        "processes": trace.num_processes(),
        "threads": len(set(zip(ev.process.tolist(), ev.thread.tolist()))),
        "functions": len(set(ev.name_id.tolist())),
        "t_start": lo,
        "t_end": hi,
        "mismatches": int(trace.metadata.get("mismatch_count", 0)),
        "metadata": {k: v for k, v in sorted(trace.metadata.items()) if isinstance(v, (int, float, str))},
        "cct": cct.to_records(ev.names),
        "cct_text": cct.to_text(ev.names),
    }


@dataclass(frozen=True)
class Command:
    name: str
    analysis: object  # the library callable this subcommand exposes
    help: str
    multi_run: bool = False


# subcommand -> library analysis; every entry in ANALYSES appears exactly once
REGISTRY = {
    "info": Command("info", trace_summary, "event counts, span and calling context tree"),
    "flat-profile": Command("flat-profile", profiles.flat_profile, "per-function metric totals"),
    "time-profile": Command("time-profile", profiles.time_profile, "per-function time per time bin"),
    "comm-matrix": Command("comm-matrix", comm.comm_matrix, "sender x receiver volume or count"),
    "comm-by-process": Command("comm-by-process", comm.comm_by_process, "volume sent and received per rank"),
    "message-histogram": Command("message-histogram", comm.message_histogram, "histogram of message sizes"),
    "comm-over-time": Command("comm-over-time", comm.comm_over_time, "messages per time bin"),
    "comm-comp": Command("comm-comp", comm.comm_comp_breakdown, "computation/communication overlap"),
    "imbalance": Command("imbalance", diagnostics.load_imbalance, "max/mean load per function"),
    "idle": Command("idle", diagnostics.idle_time, "idle time per process"),
    "lateness": Command("lateness", diagnostics.calculate_lateness, "lateness per logical step"),
    "critical-path": Command("critical-path", diagnostics.critical_path_analysis, "critical path"),
    "patterns": Command("patterns", patterns.pattern_detection, "detect repeating iterations"),
    "filter": Command("filter", query.filter_trace, "write the events matching --filter"),
    "multirun": Command("multirun", query.multi_run_analysis, "compare flat profiles of several runs",
                        multi_run=True),
    "timeline": Command("timeline", render.render_timeline, "timeline SVG"),
    "convert": Command("convert", readers.to_csv_text, "convert any supported input to canonical CSV"),
}

ANALYSES = (
    trace_summary, profiles.flat_profile, profiles.time_profile, comm.comm_matrix, comm.comm_by_process,
    comm.message_histogram, comm.comm_over_time, comm.comm_comp_breakdown, diagnostics.load_imbalance,
    diagnostics.idle_time, diagnostics.calculate_lateness, diagnostics.critical_path_analysis,
    patterns.pattern_detection, query.filter_trace, query.multi_run_analysis, render.render_timeline,
    readers.to_csv_text,
)


class _Parser(argparse.ArgumentParser):
    """Prints full help on usage errors and exits 2."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _time_range(text):
    try:
        lo, hi = text.split(":")
        lo, hi = int(float(lo)), int(float(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError("time range needs LO < HI")
    return lo, hi


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _default_workers():
    env = os.environ.get("TRACE_WORKERS")
    try:
        return max(1, int(env)) if env else None
    except ValueError:
        return None


def build_parser():
    parser = _Parser(prog="tracescope", description="Analyze parallel execution traces.")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>", parser_class=_Parser)
    sub.required = True
    for name, cmd in REGISTRY.items():
        p = sub.add_parser(name, help=cmd.help, description=cmd.help)
        p.add_argument("traces", nargs="+", metavar="trace", help="CSV or Chrome JSON trace file(s)")
        p.add_argument("--format", choices=FORMATS, help="output format (default: from --output extension, else text)")
        p.add_argument("--output", "-o", help="write the result here instead of stdout")
        p.add_argument("--input-format", choices=("csv", "chrome"), help="force the reader")
        p.add_argument("--filter", dest="filter_expr", metavar="EXPR", help="filter expression applied first")
        p.add_argument("--time-range", type=_time_range, metavar="LO:HI", help="restrict to a time window (ns)")
        p.add_argument("--processes", type=_int_list, metavar="LIST", help="restrict to these ranks, e.g. 0,4")
        p.add_argument("--workers", type=_positive, default=_default_workers(),
                       help="reader processes for multiple files (default: $TRACE_WORKERS)")
        p.add_argument("--strict", action="store_true", help="fail on malformed input instead of repairing")
        p.add_argument("--bins", type=_positive, help="number of bins")
        p.add_argument("--metric", help="metric column, e.g. exc_ns, inc_ns")
        p.add_argument("--top-k", type=_positive, default=5, help="ranks listed per row (imbalance, idle)")
        p.add_argument("--colormap", choices=("linear", "log"), default="linear")
        p.add_argument("--output-kind", choices=("size", "count"), default="size",
                       help="communication volume in bytes or message counts")
        p.add_argument("--per-process", action="store_true", help="flat-profile: one column per rank")
        p.add_argument("--group-by", choices=("name", "path"), default="name")
        p.add_argument("--by", choices=("send", "recv"), default="send", help="comm-over-time binning stamp")
        p.add_argument("--comm-names", metavar="GLOBS", help="comm-comp: comma-separated globs of comm calls")
        p.add_argument("--idle-names", metavar="LIST", help="idle: comma-separated idle function names")
        p.add_argument("--start-event", help="patterns: event that starts each iteration")
        p.add_argument("--window", type=int, help="patterns: matrix profile window")
        p.add_argument("--threshold", type=float, default=0.05, help="patterns: motif threshold fraction")
        p.add_argument("--clip", action="store_true", help="filter: clip calls to time windows")
        p.add_argument("--labels", help="multirun: comma-separated run labels")
        p.add_argument("--arrows", action="store_true", help="timeline: draw message arrows")
        p.add_argument("--critical-path", action="store_true", help="timeline: overlay the critical path")
        p.add_argument("--max-events", type=_positive, default=render.DEFAULT_MAX_EVENTS)
    return parser


# ---------------------------------------------------------------------------
# loading and pre-filtering


def _load(args, paths):
    if len(paths) == 1:
        return readers.read_trace(paths[0], args.input_format, strict=args.strict)
    return readers.read_parallel(paths, args.input_format, workers=args.workers, strict=args.strict)


def _prefilter(args, trace):
    parts = []
    if args.filter_expr:
        parts.append(query.parse_filter(args.filter_expr))
    if args.processes:
        parts.append(query.Atom("process", "in", list(args.processes)))
    if args.time_range and args.command != "timeline":
        parts.append(query.Atom("timestamp", "between", list(args.time_range)))
    if not parts:
        return trace
    expr = parts[0]
    for p in parts[1:]:
        expr = expr & p
    return query.filter_trace(trace, expr, time_clip=args.clip)


# ---------------------------------------------------------------------------
# emitters


@dataclass
class Result:
    """What an analysis produced, with the formats it can be emitted in."""

    table: AnalysisTable = None
    json_doc: object = None
    text: str = None
    csv: str = None
    svg: object = None  # zero-argument callable producing the SVG document


def _emit_table(table, svg=None):
    return Result(table=table, svg=svg)


def _json_dump(doc):
    return json.dumps(doc, indent=2, allow_nan=False, default=_json_default) + "\n"


def _render(result, fmt, command):
    if fmt == "svg":
        if result.svg is None:
            raise UsageError(f"{command} has no SVG rendering")
        return result.svg()
    if fmt == "csv":
        if result.csv is not None:
            return result.csv
        if result.table is not None:
            return result.table.to_csv()
    if fmt == "json":
        if result.json_doc is not None:
            return _json_dump(result.json_doc)
        if result.table is not None:
            return result.table.to_json()
    if fmt == "text":
        if result.text is not None:
            return result.text
        if result.table is not None:
            return result.table.to_text()
    raise UsageError(f"{command} cannot be emitted as {fmt}")


def _tables_text(pairs):
    return "\n".join(f"# {title}\n{t.to_text()}" for title, t in pairs)


def _split(text):
    return [x.strip() for x in text.split(",") if x.strip()] if text else None


def _run(args, trace):
    """Run the subcommand's analysis; return a Result."""
    cmd = args.command
    if cmd == "info":
        s = trace_summary(trace)
        lines = [f"{k}: {s[k]}" for k in ("events", "processes", "threads", "functions", "t_start", "t_end",
                                          "mismatches")]
        lines += [f"{k}: {v}" for k, v in s["metadata"].items()]
        text = "\n".join(lines) + "\n\ncalling context tree\n" + s["cct_text"]
        doc = {k: v for k, v in s.items() if k != "cct_text"}
        return Result(json_doc=doc, text=text if text.endswith("\n") else text + "\n")
    if cmd == "flat-profile":
        t = profiles.flat_profile(trace, metric=args.metric or "exc_ns", group_by=args.group_by,
                                  per_process=args.per_process)
        col = "total" if args.per_process else t.column_labels[0]
        bars = AnalysisTable(t.row_labels, [col], [[v] for v in t.column(col)], index_name=t.index_name)
        return _emit_table(t, lambda: render.render_stacked_bars(bars, title="Flat profile"))
    if cmd == "time-profile":
        t = profiles.time_profile(trace, bins=args.bins or profiles.DEFAULT_BINS, metric=args.metric or "exc_ns")
        return _emit_table(t, lambda: render.render_stacked_bars(t, title="Time profile"))
    if cmd == "comm-matrix":
        t = comm.comm_matrix(trace, output=args.output_kind)
        return _emit_table(t, lambda: render.render_heatmap(t, colormap=args.colormap))
    if cmd == "comm-by-process":
        t = comm.comm_by_process(trace, output=args.output_kind)
        return _emit_table(t, lambda: render.render_stacked_bars(t, title="Communication by process"))
    if cmd == "message-histogram":
        t = comm.message_histogram(trace, bins=args.bins or 20)
        bars = AnalysisTable([str(x) for x in t.column("lo")], ["count"], [[c] for c in t.column("count")],
                             index_name="size")
        return _emit_table(t, lambda: render.render_stacked_bars(bars, title="Message sizes"))
    if cmd == "comm-over-time":
        t = comm.comm_over_time(trace, bins=args.bins or 100, by=args.by)
        col = "count" if args.output_kind == "count" else "volume"
        bars = AnalysisTable(t.row_labels, [col], [[v] for v in t.column(col)], index_name=t.index_name)
        return _emit_table(t, lambda: render.render_stacked_bars(bars, title="Communication over time"))
    if cmd == "comm-comp":
        pred = comm.make_comm_predicate(_split(args.comm_names)) if args.comm_names else comm.default_comm_predicate
        t = comm.comm_comp_breakdown(trace, pred)
        return _emit_table(t, lambda: render.render_stacked_bars(t, title="Computation / communication"))
    if cmd == "imbalance":
        return _emit_table(diagnostics.load_imbalance(trace, metric=args.metric or "exc_ns", top_k=args.top_k))
    if cmd == "idle":
        names = _split(args.idle_names) or diagnostics.DEFAULT_IDLE_NAMES
        r = diagnostics.idle_time(trace, idle_names=names, k=args.top_k)
        doc = {"all": r.table.to_records(), "most": r.most.to_records(), "least": r.least.to_records()}
        return Result(table=r.table, json_doc=doc,
                      text=_tables_text([("idle time", r.table), ("most idle", r.most), ("least idle", r.least)]),
                      svg=lambda: render.render_stacked_bars(r.table, title="Idle time"))
    if cmd == "lateness":
        r = diagnostics.calculate_lateness(trace)
        doc = {"per_process": r.per_process.to_records(), "events": r.events.to_records()}
        return Result(json_doc=doc, csv=r.events.to_csv(), text=_tables_text([("max lateness", r.per_process)]),
                      svg=lambda: render.render_stacked_bars(r.per_process, title="Max lateness"))
    if cmd == "critical-path":
        cp = diagnostics.critical_path_analysis(trace)
        table = cp.to_table()
        head = f"length {cp.length()} ns over processes {cp.processes()}" + (" (truncated)" if cp.truncated else "")
        return Result(table=table, json_doc=json.loads(cp.to_json()), text=head + "\n" + table.to_text(),
                      svg=lambda: render.render_timeline(trace, critical_path=cp, arrows=args.arrows,
                                                         max_events=args.max_events))
    if cmd == "patterns":
        if not args.start_event:
            raise UsageError("patterns needs --start-event")
        spans = patterns.pattern_detection(trace, args.start_event, window=args.window, threshold=args.threshold)
        table = AnalysisTable(list(range(len(spans))), ["start", "end"], [list(s) for s in spans],
                              units={"start": "ns", "end": "ns"}, index_name="iteration")
        return Result(table=table, svg=lambda: render.render_timeline(trace, spans=spans, arrows=args.arrows,
                                                                      max_events=args.max_events))
    if cmd == "filter":
        if not (args.filter_expr or args.processes or args.time_range):
            raise UsageError("filter needs --filter, --processes or --time-range")
        # the filtering already happened in _prefilter
        return Result(csv=readers.to_csv_text(trace), json_doc=readers.to_chrome(trace))
    if cmd == "timeline":
        stats = {}
        cp = diagnostics.critical_path_analysis(trace) if args.critical_path else None
        svg = render.render_timeline(trace, critical_path=cp, time_range=args.time_range, arrows=args.arrows,
                                     max_events=args.max_events, stats=stats)
        if stats.get("dropped"):
            print(f"timeline: drew {stats['drawn']} calls, dropped {stats['dropped']} shortest", file=sys.stderr)
        return Result(svg=lambda: svg)
    if cmd == "convert":
        return Result(csv=readers.to_csv_text(trace), json_doc=readers.to_chrome(trace))
    raise UsageError(f"unknown subcommand {cmd}")


_DEFAULT_FORMAT = {"timeline": "svg", "convert": "csv", "filter": "csv"}


def _resolve_format(args):
    if args.format:
        return args.format
    if args.output:
        fmt = _EXT_FORMAT.get(Path(args.output).suffix.lower())
        if fmt:
            return fmt
    return _DEFAULT_FORMAT.get(args.command, "text")


def main(argv=None):
    """Entry point; returns the process exit code."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    fmt = _resolve_format(args)
    try:
        if REGISTRY[args.command].multi_run:
            if len(args.traces) < 2:
                raise UsageError("multirun needs at least two traces")
            runs = [_prefilter(args, readers.read_trace(p, args.input_format, strict=args.strict))
                    for p in args.traces]
            table = query.multi_run_analysis(runs, metric=args.metric or "exc_ns", labels=_split(args.labels))
            result = Result(table=table, svg=lambda: render.render_stacked_bars(table, title="Runs"))
        else:
            trace = _prefilter(args, _load(args, args.traces))
            result = _run(args, trace)
        out = _render(result, fmt, args.command)
    except UsageError as exc:
        parser._subparsers._group_actions[0].choices[args.command].print_help(sys.stderr)
        print(f"tracescope {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TraceError, OSError, ValueError) as exc:
        print(f"tracescope {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
