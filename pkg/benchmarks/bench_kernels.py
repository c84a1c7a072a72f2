#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--pairs 2000] [--max-len 40]

The same token-id pairs are fed to both paths; outputs are cross-checked
before timing. Run with FIGQA_NUMBA=0 to confirm the fallback is what the
package would use without numba.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from figqa import _kernels
from figqa.metrics import rouge1, rougeL


def make_pairs(n_pairs: int, max_len: int, vocab: int = 50, seed: int = 0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        la = int(rng.integers(1, max_len + 1))
        lb = int(rng.integers(1, max_len + 1))
        pairs.append(
            (
                rng.integers(0, vocab, size=la).astype(np.int64),
                rng.integers(0, vocab, size=lb).astype(np.int64),
            )
        )
    return pairs


def time_fn(fn, pairs, sort_inputs=False, repeats=3):
    if sort_inputs:
        pairs = [(np.sort(a), np.sort(b)) for a, b in pairs]
    best = float("inf")
    checksum = 0
    for _ in range(repeats):
        start = time.perf_counter()
        checksum = 0
        for a, b in pairs:
            checksum += fn(a, b)
        best = min(best, time.perf_counter() - start)
    return best, checksum


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--max-len", type=int, default=40)
    args = parser.parse_args()

    print(f"active kernel backend: {_kernels.BACKEND}")
    pairs = make_pairs(args.pairs, args.max_len)

    rows = []
    numba_ok = hasattr(_kernels, "_lcs_len_numba")
    if numba_ok:
        # Warm up JIT before timing.
        _kernels._lcs_len_numba(pairs[0][0], pairs[0][1])
        _kernels._overlap_numba(np.sort(pairs[0][0]), np.sort(pairs[0][1]))

    jobs = [("lcs_len", "_lcs_len_numba", "_lcs_len_numpy", False),
            ("clipped_overlap", "_overlap_numba", "_overlap_numpy", True)]
    for label, numba_name, numpy_name, sort_inputs in jobs:
        numpy_time, numpy_sum = time_fn(getattr(_kernels, numpy_name), pairs, sort_inputs)
        if numba_ok:
            numba_time, numba_sum = time_fn(getattr(_kernels, numba_name), pairs, sort_inputs)
            assert numba_sum == numpy_sum, f"{label}: paths disagree"
            rows.append((label, numba_time, numpy_time, numpy_time / numba_time))
        else:
            rows.append((label, None, numpy_time, None))

    print(f"\n{args.pairs} pairs, token length <= {args.max_len}, best of 3:")
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for label, nb, np_, ratio in rows:
        nb_s = f"{nb:.4f}" if nb is not None else "n/a"
        ratio_s = f"{ratio:.1f}x" if ratio is not None else "-"
        print(f"{label:<18}{nb_s:>12}{np_:>12.4f}{ratio_s:>10}")

    # End-to-end flavor: score a synthetic prediction set.
    rng = np.random.default_rng(1)
    words = [f"w{i}" for i in range(60)]
    texts = [
        " ".join(words[j] for j in rng.integers(0, len(words), size=rng.integers(3, 25)))
        for _ in range(1000)
    ]
    start = time.perf_counter()
    for cand, ref in zip(texts, reversed(texts)):
        rouge1(cand, ref)
        rougeL(cand, ref)
    elapsed = time.perf_counter() - start
    print(f"\n1000 rouge1+rougeL text pairs via active backend: {elapsed:.3f}s")


if __name__ == "__main__":
    main()
