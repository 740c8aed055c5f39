"""Analysis engine for parallel execution traces."""

from .callgraph import calc_exc_metrics, calc_inc_metrics, create_cct, match_caller_callee
from .comm import (comm_by_process, comm_comp_breakdown, comm_matrix, comm_over_time, match_messages,
                   message_histogram)
from .diagnostics import (assign_logical_steps, calculate_lateness, critical_path_analysis, idle_time,
                          load_imbalance)
from .errors import TraceError
from .intervals import IntervalSet
from .model import ABSENT, AnalysisTable, Cct, EventKind, EventTable, Trace
from .patterns import matrix_profile, pattern_detection
from .profiles import flat_profile, time_profile
from .query import Atom, filter_trace, multi_run_analysis, parse_filter
from .readers import read_chrome, read_csv, read_parallel, read_trace, write_csv

__version__ = "0.1.0"

__all__ = [
    "ABSENT", "AnalysisTable", "Atom", "Cct", "EventKind", "EventTable", "IntervalSet", "Trace", "TraceError",
    "assign_logical_steps", "calc_exc_metrics", "calc_inc_metrics", "calculate_lateness", "comm_by_process",
    "comm_comp_breakdown", "comm_matrix", "comm_over_time", "create_cct", "critical_path_analysis",
    "filter_trace", "flat_profile", "idle_time", "load_imbalance", "match_caller_callee", "match_messages",
    "matrix_profile", "message_histogram", "multi_run_analysis", "parse_filter", "pattern_detection",
    "read_chrome", "read_csv", "read_parallel", "read_trace", "time_profile", "write_csv",
]
