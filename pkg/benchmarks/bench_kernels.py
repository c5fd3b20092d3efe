#!/usr/bin/env python3
"""Benchmark every dual kernel: numba @njit vs the pure-NumPy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeats 20]

The same dispatch the package uses at import time is controlled by the
T2L_NUMBA environment variable; this script calls both variants directly so
one process covers the comparison. JIT compilation happens during warmup
and is excluded from the timings.
"""

import argparse
import time

import numpy as np

from t2l import _kernels as K


def timeit(fn, repeats):
    fn()  # warmup / JIT
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    n = 1440
    grid = np.arange(n, dtype=np.float64)
    d_matrix = np.abs(np.subtract.outer(grid, grid))
    lags = np.exp(-np.arange(n) / 200.0)
    x_conv = rng.normal(size=(16, 96, 129)).astype(np.float32)
    cols = K.im2col1d_numpy(x_conv, 3, 2, 1)
    x_pool = rng.normal(size=(16, 128, 64)).astype(np.float32)
    pooled, arg = K.maxpool2_fwd_numpy(x_pool)
    x_adapt = rng.normal(size=(16, 65, 8)).astype(np.float32)
    dy_adapt = rng.normal(size=(16, 65, 64)).astype(np.float32)
    scaled = rng.normal(size=1440) * 5

    cases = [
        ("stationary_kernel rbf 1440^2",
         lambda: K.stationary_kernel_numpy(K.KIND_RBF, 50.0, 0.0, d_matrix),
         lambda: K.stationary_kernel_numba(K.KIND_RBF, 50.0, 0.0, d_matrix)),
        ("stationary_kernel periodic 1440^2",
         lambda: K.stationary_kernel_numpy(K.KIND_PERIODIC, 1.0, 30.0, d_matrix),
         lambda: K.stationary_kernel_numba(K.KIND_PERIODIC, 1.0, 30.0, d_matrix)),
        ("toeplitz_from_lags 1440",
         lambda: K.toeplitz_from_lags_numpy(lags),
         lambda: K.toeplitz_from_lags_numba(lags)),
        ("im2col1d (16,96,129) k3 s2",
         lambda: K.im2col1d_numpy(x_conv, 3, 2, 1),
         lambda: K.im2col1d_numba(x_conv, 3, 2, 1)),
        ("col2im1d (16,96,129) k3 s2",
         lambda: K.col2im1d_numpy(cols, 129, 3, 2, 1),
         lambda: K.col2im1d_numba(cols, 129, 3, 2, 1)),
        ("maxpool2 fwd (16,128,64)",
         lambda: K.maxpool2_fwd_numpy(x_pool),
         lambda: K.maxpool2_fwd_numba(x_pool)),
        ("maxpool2 bwd (16,128,32)",
         lambda: K.maxpool2_bwd_numpy(pooled, arg, 64),
         lambda: K.maxpool2_bwd_numba(pooled, arg, 64)),
        ("adaptive pool fwd 8->64",
         lambda: K.adaptive_avgpool_fwd_numpy(x_adapt, 64),
         lambda: K.adaptive_avgpool_fwd_numba(x_adapt, 64)),
        ("adaptive pool bwd 64->8",
         lambda: K.adaptive_avgpool_bwd_numpy(dy_adapt, 8),
         lambda: K.adaptive_avgpool_bwd_numba(dy_adapt, 8)),
        ("quantize_bins 1440",
         lambda: K.quantize_bins_numpy(scaled, 15.0, 512),
         lambda: K.quantize_bins_numba(scaled, 15.0, 512)),
    ]

    print(f"dispatch in this process: USE_NUMBA={K.USE_NUMBA}")
    print(f"{'kernel':38s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, np_fn, nb_fn in cases:
        t_np = timeit(np_fn, args.repeats) * 1e3
        t_nb = timeit(nb_fn, args.repeats) * 1e3
        print(f"{name:38s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
