"""Exception hierarchy shared by readers and analyses."""


class TraceError(Exception):
    """Base class for every error raised by tracescope."""


class EmptyTrace(TraceError):
    pass


class MalformedHeader(TraceError):
    pass


class MalformedRow(TraceError):
    def __init__(self, line, reason=""):
        self.line = line
        msg = f"malformed row at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class MalformedJson(TraceError):
    pass


class UnbalancedBE(TraceError):
    def __init__(self, pid, tid):
        self.pid = pid
        self.tid = tid
        super().__init__(f"unbalanced B/E events on pid={pid} tid={tid}")


class DuplicateProcess(TraceError):
    def __init__(self, process):
        self.process = process
        super().__init__(f"process {process} appears in more than one file")


class MismatchedLeave(TraceError):
    def __init__(self, row, reason=""):
        self.row = row
        super().__init__(f"mismatched Leave at row {row}" + (f": {reason}" if reason else ""))


class MissingMetric(TraceError):
    pass


class BadBinCount(TraceError):
    pass


class NoCommData(TraceError):
    pass


class CycleDetected(TraceError):
    pass


class UnmatchedDependency(TraceError):
    pass


class SeriesTooShort(TraceError):
    pass


class NoOccurrences(TraceError):
    pass


class BadExpr(TraceError):
    pass


class TooFewRuns(TraceError):
    pass


class NonSquare(TraceError):
    pass
