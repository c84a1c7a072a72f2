"""The numba and numpy kernel paths must agree exactly."""

from __future__ import annotations

import numpy as np
import pytest

from figqa import _kernels


def _brute_lcs(a: list[int], b: list[int]) -> int:
    # Textbook quadratic DP, independent of both shipped implementations.
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def _pairs(n_pairs: int, max_len: int = 12, vocab: int = 6):
    rng = np.random.default_rng(7)
    for _ in range(n_pairs):
        la, lb = rng.integers(0, max_len + 1, size=2)
        yield (
            rng.integers(0, vocab, size=la).astype(np.int64),
            rng.integers(0, vocab, size=lb).astype(np.int64),
        )


def test_lcs_matches_brute_force():
    for a, b in _pairs(150):
        assert _kernels._lcs_len_numpy(a, b) == _brute_lcs(list(a), list(b))


def test_overlap_matches_counter():
    from collections import Counter

    for a, b in _pairs(150):
        expected = sum((Counter(list(a)) & Counter(list(b))).values())
        assert _kernels._overlap_numpy(np.sort(a), np.sort(b)) == expected


@pytest.mark.skipif(_kernels.BACKEND != "numba", reason="numba path not active")
def test_numba_and_numpy_paths_agree():
    for a, b in _pairs(100):
        assert _kernels._lcs_len_numba(a, b) == _kernels._lcs_len_numpy(a, b)
        sa, sb = np.sort(a), np.sort(b)
        assert _kernels._overlap_numba(sa, sb) == _kernels._overlap_numpy(sa, sb)


def test_empty_inputs():
    empty = np.array([], dtype=np.int64)
    full = np.array([1, 2, 3], dtype=np.int64)
    assert _kernels.lcs_len(empty, full) == 0
    assert _kernels.lcs_len(full, empty) == 0
    assert _kernels.clipped_overlap(empty, full) == 0
