"""Time the numba kernels against their pure-numpy twins.

Walks fnlabel.kernels.PAIRS, runs each implementation on the same
synthetic workload, and prints per-kernel timings plus the speedup.
Needs numba importable (run with FNLABEL_JIT unset or 1); with numba
missing only the numpy column is filled.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from fnlabel import kernels


def _tree(depth, E, rng):
    """Complete routing tree in heap layout with random 4-feature planes."""
    internal = 2 ** depth - 1
    w_indptr = np.arange(0, 4 * internal + 1, 4, dtype=np.int64)
    w_idx = rng.integers(0, E, size=4 * internal).astype(np.int64)
    w_val = rng.normal(size=4 * internal)
    bias = rng.normal(size=internal) * 0.1
    left = np.empty(internal, dtype=np.int64)
    right = np.empty(internal, dtype=np.int64)
    for i in range(internal):
        lc, rc = 2 * i + 1, 2 * i + 2
        left[i] = lc if lc < internal else -(lc - internal + 1)
        right[i] = rc if rc < internal else -(rc - internal + 1)
    return w_indptr, w_idx, w_val, bias, left, right


def workloads(rng):
    E = 64
    X = rng.normal(size=(2000, E))
    y = np.where(rng.random(2000) < 0.5, -1.0, 1.0)
    sw = np.ones(2000)
    yield "cd_logistic", (X, y, sw, 0.1, 30, 0.0)

    Xr = rng.normal(size=(200_000, E))
    tree = _tree(10, E, rng)
    out = np.zeros(len(Xr), dtype=np.int64)
    yield "route_points", (Xr, *tree, out)

    shingles = rng.integers(0, 2 ** 63, size=20_000).astype(np.uint64)
    a = (rng.integers(0, 2 ** 63, size=64).astype(np.uint64) | np.uint64(1))
    b = rng.integers(0, 2 ** 63, size=64).astype(np.uint64)
    sig = np.zeros(64, dtype=np.uint64)
    yield "minhash_sig", (shingles, a, b, sig)

    idx = np.unique(rng.integers(0, 1 << 18, size=100_000)).astype(np.int64)
    val = rng.normal(size=len(idx))
    proj = np.zeros(512)
    yield "project_signed", (idx, val, 512, np.uint64(12345), proj)

    n, L, k = 100_000, 512, 5
    counts = rng.integers(1, 5, size=n)
    y_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=y_indptr[1:])
    y_ids = rng.integers(0, L, size=y_indptr[-1]).astype(np.int64)
    inv_p = 1.0 / rng.uniform(0.05, 1.0, size=L)
    posL = np.full(L, -1, dtype=np.int64)
    posR = np.full(L, -1, dtype=np.int64)
    posL[rng.choice(L, k, replace=False)] = np.arange(k)
    posR[rng.choice(L, k, replace=False)] = np.arange(k)
    disc = 1.0 / np.log2(np.arange(k) + 2)
    side = rng.integers(0, 2, size=n).astype(np.int8)
    yield "assign_sides", (y_indptr, y_ids, inv_p, posL, posR, disc, side)


def _fresh(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def bench(fn, args, repeats):
    fn(*_fresh(args))
    best = float("inf")
    for _ in range(repeats):
        call = _fresh(args)
        t0 = time.perf_counter()
        fn(*call)
        best = min(best, time.perf_counter() - t0)
    return best * 1000


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba active: {kernels.USING_NUMBA}")
    print(f"{'kernel':<16}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, work in workloads(rng):
        jit_fn, np_fn = kernels.PAIRS[name]
        np_ms = bench(np_fn, work, args.repeats)
        if jit_fn is None:
            print(f"{name:<16}{'-':>12}{np_ms:>12.3f}{'-':>10}")
            continue
        jit_ms = bench(jit_fn, work, args.repeats)
        print(f"{name:<16}{jit_ms:>12.3f}{np_ms:>12.3f}"
              f"{np_ms / jit_ms:>9.1f}x")


if __name__ == "__main__":
    main()
