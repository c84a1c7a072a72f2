"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Set FIGQA_NUMBA=0 to force the numpy implementations (useful on platforms
where numba is unavailable or for benchmarking, see benchmarks/bench_kernels.py).
Both paths are exact integer computations and return identical results.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("FIGQA_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

if _WANT_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _WANT_NUMBA = False


def _lcs_len_numpy(a: np.ndarray, b: np.ndarray) -> int:
    # Row-wise DP using max(L[i-1][j], L[i][j-1], L[i-1][j-1] + eq), which
    # equals the classic LCS recurrence and vectorizes as a running max.
    n, m = a.size, b.size
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    curr = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        t = prev[:-1] + (b == a[i])
        np.maximum(prev[1:], t, out=curr[1:])
        np.maximum.accumulate(curr[1:], out=curr[1:])
        prev, curr = curr, prev
    return int(prev[m])


def _overlap_numpy(a_sorted: np.ndarray, b_sorted: np.ndarray) -> int:
    # Clipped multiset intersection size via per-id counts.
    if a_sorted.size == 0 or b_sorted.size == 0:
        return 0
    width = int(max(a_sorted[-1], b_sorted[-1])) + 1
    ca = np.bincount(a_sorted, minlength=width)
    cb = np.bincount(b_sorted, minlength=width)
    return int(np.minimum(ca, cb).sum())


if _WANT_NUMBA:

    @njit(cache=True)
    def _lcs_len_numba(a: np.ndarray, b: np.ndarray) -> int:
        n, m = a.size, b.size
        if n == 0 or m == 0:
            return 0
        prev = np.zeros(m + 1, dtype=np.int64)
        curr = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            ai = a[i]
            for j in range(1, m + 1):
                if b[j - 1] == ai:
                    v = prev[j - 1] + 1
                else:
                    v = prev[j]
                    if curr[j - 1] > v:
                        v = curr[j - 1]
                curr[j] = v
            prev, curr = curr, prev
        return prev[m]

    @njit(cache=True)
    def _overlap_numba(a_sorted: np.ndarray, b_sorted: np.ndarray) -> int:
        i = 0
        j = 0
        count = 0
        while i < a_sorted.size and j < b_sorted.size:
            if a_sorted[i] == b_sorted[j]:
                count += 1
                i += 1
                j += 1
            elif a_sorted[i] < b_sorted[j]:
                i += 1
            else:
                j += 1
        return count

    BACKEND = "numba"
    lcs_len = _lcs_len_numba
    clipped_overlap = _overlap_numba
else:
    BACKEND = "numpy"
    lcs_len = _lcs_len_numpy
    clipped_overlap = _overlap_numpy
