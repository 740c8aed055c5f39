"""Sets of disjoint half-open integer intervals."""

import numpy as np


class IntervalSet:
    """Sorted, disjoint, non-touching half-open intervals ``[lo, hi)``.

    >>> IntervalSet([(0, 5), (5, 8), (10, 12)]).intervals
    [(0, 8), (10, 12)]
    >>> (IntervalSet([(0, 10)]) - IntervalSet([(3, 4)])).measure()
    9
    """

    __slots__ = ("lo", "hi")

    def __init__(self, intervals=(), *, _normalized=None):
        if _normalized is not None:
            self.lo, self.hi = _normalized
            return
        pairs = [(int(a), int(b)) for a, b in intervals if b > a]
        if not pairs:
            self.lo = np.zeros(0, dtype=np.int64)
            self.hi = np.zeros(0, dtype=np.int64)
            return
        self.lo, self.hi = _normalize(np.array([p[0] for p in pairs], dtype=np.int64),
                                      np.array([p[1] for p in pairs], dtype=np.int64))

    @classmethod
    def from_arrays(cls, lo, hi):
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        keep = hi > lo
        if not keep.any():
            return cls()
        return cls(_normalized=_normalize(lo[keep], hi[keep]))

    @property
    def intervals(self):
        return list(zip(self.lo.tolist(), self.hi.tolist()))

    def __len__(self):
        return len(self.lo)

    def __iter__(self):
        return iter(self.intervals)

    def __repr__(self):
        return f"IntervalSet({self.intervals})"

    def __eq__(self, other):
        return (isinstance(other, IntervalSet) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    __hash__ = None

    def measure(self):
        return int((self.hi - self.lo).sum())

    def __or__(self, other):
        return IntervalSet.from_arrays(np.concatenate((self.lo, other.lo)), np.concatenate((self.hi, other.hi)))

    def __and__(self, other):
        out_lo, out_hi = [], []
        a_lo, a_hi = self.lo.tolist(), self.hi.tolist()
        b_lo, b_hi = other.lo.tolist(), other.hi.tolist()
        i = j = 0
        while i < len(a_lo) and j < len(b_lo):
            lo = max(a_lo[i], b_lo[j])
            hi = min(a_hi[i], b_hi[j])
            if lo < hi:
                out_lo.append(lo)
                out_hi.append(hi)
            if a_hi[i] < b_hi[j]:
                i += 1
            else:
                j += 1
        return IntervalSet(_normalized=(np.array(out_lo, dtype=np.int64), np.array(out_hi, dtype=np.int64)))

    def __sub__(self, other):
        if not len(self):
            return IntervalSet()
        return self & other.complement(int(self.lo[0]), int(self.hi[-1]))

    def complement(self, lo, hi):
        """Complement within ``[lo, hi)``."""
        starts = np.concatenate(([lo], self.hi))
        ends = np.concatenate((self.lo, [hi]))
        starts = np.maximum(starts, lo)
        ends = np.minimum(ends, hi)
        return IntervalSet.from_arrays(starts, ends)

    def clip(self, lo, hi):
        return self & IntervalSet([(lo, hi)])


def _normalize(lo, hi):
    order = np.lexsort((hi, lo))
    lo = lo[order]
    hi = hi[order]
    # a new run starts where lo exceeds every hi seen so far
    run_hi = np.maximum.accumulate(hi)
    new = np.ones(len(lo), dtype=bool)
    new[1:] = lo[1:] > run_hi[:-1]
    starts = np.flatnonzero(new)
    ends = np.concatenate((starts[1:], [len(lo)])) - 1
    return lo[starts], run_hi[ends]
