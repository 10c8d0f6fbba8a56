#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--points N] [--repeat R]

The numpy fallback is what you get with ORTHOSPLAT_NUMBA=0; this script
calls both implementations directly so a single process can compare them.
"""

import argparse
import time

import numpy as np

from orthosplat import kernels


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_splat(n_points, height, width, repeat):
    rng = np.random.default_rng(0)
    rows = rng.integers(0, height, n_points)
    cols = rng.integers(0, width, n_points)
    pw = rng.uniform(0.1, 1.0, n_points)
    colors = rng.uniform(0, 1, (n_points, 3))
    kdr, kdc, kd = kernels.disk_offsets(1.0)
    kw = np.exp(-(kd**2) / 0.5)
    args = (rows, cols, pw, colors, height, width, kdr, kdc, kw)
    out = {"numpy": timeit(lambda: kernels._splat_accumulate_numpy(*args), repeat)}
    if kernels.HAVE_NUMBA:
        kernels._splat_accumulate_numba(*args)  # compile
        out["numba"] = timeit(lambda: kernels._splat_accumulate_numba(*args), repeat)
    return out


def bench_scatter_max(n_points, height, width, repeat):
    rng = np.random.default_rng(1)
    rows = rng.integers(0, height, n_points)
    cols = rng.integers(0, width, n_points)
    vals = rng.uniform(0, 30, n_points)
    args = (rows, cols, vals, height, width, -np.inf)
    out = {"numpy": timeit(lambda: kernels._scatter_max_numpy(*args), repeat)}
    if kernels.HAVE_NUMBA:
        kernels._scatter_max_numba(*args)
        out["numba"] = timeit(lambda: kernels._scatter_max_numba(*args), repeat)
    return out


def bench_knn(n_holes, height, width, repeat):
    rng = np.random.default_rng(2)
    valid = rng.uniform(0, 1, (height, width)) > 0.4
    image = rng.uniform(0, 1, (height, width, 3))
    holes = np.argwhere(~valid)[:n_holes]
    kdr, kdc, kd = kernels.disk_offsets(4.0)
    keep = kd > 0
    args = (holes[:, 0], holes[:, 1], valid, image, kdr[keep], kdc[keep], kd[keep], 6, 1e-6)
    out = {"numpy": timeit(lambda: kernels._knn_gather_numpy(*args), repeat)}
    if kernels.HAVE_NUMBA:
        kernels._knn_gather_numba(*args)
        out["numba"] = timeit(lambda: kernels._knn_gather_numba(*args), repeat)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=2_000_000)
    ap.add_argument("--raster", type=int, default=2000, help="supersampled raster side")
    ap.add_argument("--holes", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    results = {
        f"splat_accumulate ({args.points:,} pts -> {args.raster}^2)": bench_splat(
            args.points, args.raster, args.raster, args.repeat
        ),
        f"scatter_max ({args.points:,} pts)": bench_scatter_max(
            args.points, args.raster, args.raster, args.repeat
        ),
        f"knn_gather ({args.holes:,} holes)": bench_knn(args.holes, 1000, 1000, args.repeat),
    }

    print(f"numba available: {kernels.HAVE_NUMBA}\n")
    print(f"{'kernel':<48}{'numpy':>10}{'numba':>10}{'speedup':>9}")
    print("-" * 77)
    for name, r in results.items():
        np_t = r["numpy"]
        if "numba" in r:
            print(f"{name:<48}{np_t * 1e3:>8.1f}ms{r['numba'] * 1e3:>8.1f}ms{np_t / r['numba']:>8.1f}x")
        else:
            print(f"{name:<48}{np_t * 1e3:>8.1f}ms{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
