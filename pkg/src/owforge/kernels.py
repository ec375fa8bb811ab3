"""Hot numeric kernels: LCS length and greedy one-to-one assignment.

Each kernel has a numba implementation and a pure-numpy implementation with
identical results. The public names dispatch to numba unless it is disabled
(see :mod:`owforge._accel`).
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

__all__ = [
    "lcs_length",
    "greedy_assignment",
    "lcs_length_numpy",
    "greedy_assignment_numpy",
    "encode_pair",
]


def encode_pair(a, b):
    """Map two token sequences onto a shared integer vocabulary."""
    vocab = {}
    ea = np.fromiter((vocab.setdefault(t, len(vocab)) for t in a), dtype=np.int64, count=len(a))
    eb = np.fromiter((vocab.setdefault(t, len(vocab)) for t in b), dtype=np.int64, count=len(b))
    return ea, eb


def lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    # Row update: cur[j] = max(prev[j], cur[j-1], prev[j-1] + eq). Unrolling
    # cur[j-1] turns this into a running max over max(prev[j'], prev[j'-1] + eq[j']).
    if a.size == 0 or b.size == 0:
        return 0
    if a.size < b.size:
        a, b = b, a
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for tok in a:
        cand = np.maximum(prev[1:], prev[:-1] + (b == tok))
        cur = np.empty_like(prev)
        cur[0] = 0
        np.maximum.accumulate(cand, out=cur[1:])
        prev = cur
    return int(prev[-1])


@njit(cache=True)
def _lcs_length_jit(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0 or m == 0:
        return 0
    row = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        diag = 0
        for j in range(1, m + 1):
            up = row[j]
            if a[i] == b[j - 1]:
                row[j] = diag + 1
            elif row[j - 1] > up:
                row[j] = row[j - 1]
            diag = up
    return row[m]


def greedy_assignment_numpy(scores: np.ndarray, threshold: float = 0.0):
    """One-to-one greedy matching on a (pred x gold) score matrix.

    Pairs are visited by descending score, ties broken by (row, col); a pair is
    taken when both endpoints are free and its score is at least ``threshold``.
    Returns ``(row_to_col, col_to_row)`` with -1 for unmatched entries.
    """
    n, m = scores.shape
    row_to_col = np.full(n, -1, dtype=np.int64)
    col_to_row = np.full(m, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return row_to_col, col_to_row
    flat = scores.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    for idx in order:
        if flat[idx] < threshold:
            break
        r, c = divmod(int(idx), m)
        if row_to_col[r] == -1 and col_to_row[c] == -1:
            row_to_col[r] = c
            col_to_row[c] = r
    return row_to_col, col_to_row


@njit(cache=True)
def _greedy_assignment_jit(scores, threshold):
    n, m = scores.shape
    row_to_col = np.full(n, -1, dtype=np.int64)
    col_to_row = np.full(m, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return row_to_col, col_to_row
    flat = scores.ravel()
    # stable mergesort on the negated scores keeps (row, col) order among ties
    order = np.argsort(-flat, kind="mergesort")
    for k in range(order.shape[0]):
        idx = order[k]
        if flat[idx] < threshold:
            break
        r = idx // m
        c = idx % m
        if row_to_col[r] == -1 and col_to_row[c] == -1:
            row_to_col[r] = c
            col_to_row[c] = r
    return row_to_col, col_to_row


if HAVE_NUMBA:

    def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
        return int(_lcs_length_jit(a, b))

    def greedy_assignment(scores: np.ndarray, threshold: float = 0.0):
        return _greedy_assignment_jit(np.ascontiguousarray(scores, dtype=np.float64), float(threshold))

else:  # pragma: no cover - exercised with OWFORGE_DISABLE_NUMBA=1
    lcs_length = lcs_length_numpy
    greedy_assignment = greedy_assignment_numpy
