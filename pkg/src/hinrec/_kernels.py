"""Inner loops used by training and evaluation.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. The numba path is used unless ``HINREC_DISABLE_NUMBA`` is set
to a truthy value or numba cannot be imported. Both paths accumulate in the
same order, so scatter results agree bitwise; dot products may differ in the
last ulp.
"""
import os

import numpy as np

_FLAG = os.environ.get("HINREC_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED


# ---------------------------------------------------------------- numpy --

def scatter_add_rows_np(target, index, values):
    """target[index[b]] += values[b], sequentially in b."""
    np.add.at(target, index, values)


def gather_dot_np(a, ia, b, ib):
    """out[j] = a[ia[j]] . b[ib[j]]"""
    return np.einsum("ij,ij->i", a[ia], b[ib])


def rank_counts_np(pos_score, pos_item, neg_scores, neg_items):
    """Per instance: negatives scored above, tied before, and tied overall.

    A negative tied with the positive is ranked ahead of it when its item
    index is smaller.
    """
    ps = pos_score[:, None]
    above = (neg_scores > ps).sum(axis=1)
    tied = neg_scores == ps
    tied_before = (tied & (neg_items < pos_item[:, None])).sum(axis=1)
    return above.astype(np.int64), tied_before.astype(np.int64), tied.sum(axis=1).astype(np.int64)


# ---------------------------------------------------------------- numba --

if HAS_NUMBA:

    @njit(cache=True)
    def scatter_add_rows_nb(target, index, values):
        n, width = values.shape
        for j in range(n):
            row = index[j]
            for c in range(width):
                target[row, c] += values[j, c]

    @njit(cache=True)
    def gather_dot_nb(a, ia, b, ib):
        n = ia.shape[0]
        width = a.shape[1]
        out = np.empty(n)
        for j in range(n):
            ra = ia[j]
            rb = ib[j]
            s = 0.0
            for c in range(width):
                s += a[ra, c] * b[rb, c]
            out[j] = s
        return out

    @njit(cache=True)
    def rank_counts_nb(pos_score, pos_item, neg_scores, neg_items):
        n, m = neg_scores.shape
        above = np.zeros(n, dtype=np.int64)
        tied_before = np.zeros(n, dtype=np.int64)
        tied = np.zeros(n, dtype=np.int64)
        for i in range(n):
            s = pos_score[i]
            k = pos_item[i]
            for j in range(m):
                v = neg_scores[i, j]
                if v > s:
                    above[i] += 1
                elif v == s:
                    tied[i] += 1
                    if neg_items[i, j] < k:
                        tied_before[i] += 1
        return above, tied_before, tied


if USE_NUMBA:
    scatter_add_rows = scatter_add_rows_nb
    gather_dot = gather_dot_nb
    rank_counts = rank_counts_nb
else:
    scatter_add_rows = scatter_add_rows_np
    gather_dot = gather_dot_np
    rank_counts = rank_counts_np

BACKEND = "numba" if USE_NUMBA else "numpy"
