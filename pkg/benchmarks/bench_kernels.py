#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure numpy fallback.

Runs the same workloads through both backends (a forest fit via each
split-search kernel, then the three proximity constructions plus the
out-of-sample GAP extension) and prints a timing table with speedups.
Results are checked for bit-identity while we are at it.

Usage:
    python benchmarks/bench_kernels.py [--n 600] [--trees 150] [--repeat 3]
"""

import argparse
import time

import numpy as np

from forestcase.data import encode, synth_three_class
from forestcase.forest import ForestParams, fit
from forestcase.kernels import numpy_backend

try:
    from forestcase.kernels import numba_backend
except ImportError:
    numba_backend = None


def time_call(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_fit(dataset, backend, trees, repeat):
    # forest looks the kernels up by attribute at call time, so patching
    # the dispatcher module redirects it
    import forestcase.kernels as K

    saved = (K.best_split_node, K.apply_tree)
    K.best_split_node = backend.best_split_node
    K.apply_tree = backend.apply_tree
    try:
        params = ForestParams(n_trees=trees, max_features="sqrt", seed=0)
        return time_call(lambda: fit(dataset, params), repeat)
    finally:
        K.best_split_node, K.apply_tree = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--trees", type=int, default=150)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if numba_backend is None:
        raise SystemExit("numba is not installed; nothing to compare against")

    dataset = encode(synth_three_class(args.n, seed=0), missing_policy="zero")
    print(f"dataset: {dataset.n_rows} rows x {dataset.n_features} features, "
          f"{args.trees} trees\n")

    rows = []

    t_np, forest_np = bench_fit(dataset, numpy_backend, args.trees, args.repeat)
    t_nb, forest_nb = bench_fit(dataset, numba_backend, args.trees, args.repeat)
    assert forest_np.hash() == forest_nb.hash(), "backends grew different forests"
    rows.append(("forest fit", t_np, t_nb))

    leaf = forest_nb.leaf_matrix()
    inbag = forest_nb.inbag_matrix()
    q = dataset.features[: max(10, args.n // 10)]
    leaf_q = forest_nb.apply_matrix(q)

    cases = [
        ("proximity original", lambda b: b.prox_original_counts(leaf)),
        ("proximity oob", lambda b: b.prox_oob_counts(leaf, inbag)),
        ("proximity gap", lambda b: b.prox_gap_sums(leaf, inbag)),
        ("gap extension", lambda b: b.extend_gap_sums(leaf, inbag, leaf_q)),
    ]
    for name, call in cases:
        t_np, out_np = time_call(lambda: call(numpy_backend), args.repeat)
        t_nb, out_nb = time_call(lambda: call(numba_backend), args.repeat)
        a = out_np[0] if isinstance(out_np, tuple) else out_np
        b = out_nb[0] if isinstance(out_nb, tuple) else out_nb
        assert np.array_equal(a, b), f"{name}: backends disagree"
        rows.append((name, t_np, t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>9}  {'numba':>9}  {'speedup':>7}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width}}  {t_np:>8.3f}s  {t_nb:>8.3f}s  "
              f"{t_np / t_nb:>6.1f}x")
    print("\nall outputs bit-identical across backends")


if __name__ == "__main__":
    main()
