"""Time the numba and numpy kernels side by side.

    python3 benchmarks/bench_kernels.py [--reps N]

Prints one row per (kernel, size) with the median wall time of each backend
and the speed-up. Compilation happens before timing starts.
"""
import argparse
import statistics
import time

import numpy as np

from darn import _kernels
from darn.sparse import SparseRows


def median_time(fn, reps):
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def cases(rng):
    for k in (10, 1_000, 100_000):
        w = rng.uniform(-3, 3, k)
        w -= w.max()
        yield "bisect_nu", f"k={k}", (w, 1e-12)
    for d in (10, 50, 200):
        A = rng.normal(size=(d, d))
        A = (A + A.T) / 2
        v0 = rng.normal(size=d)
        yield "power_iteration", f"d={d}", (A, v0 / np.linalg.norm(v0), 20, 0.0)
    for n_cols in (1_000, 5_000):
        X = SparseRows.from_dense((rng.random((20, n_cols)) < 0.01) * rng.random((20, n_cols)))
        W = rng.normal(size=(n_cols, 100))
        G = rng.normal(size=(20, 100))
        yield "csr_matmul", f"20x{n_cols}", (X.indptr, X.indices, X.values, W)
        yield "csr_t_matmul", f"20x{n_cols}", (X.indptr, X.indices, X.values, G, n_cols)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=50)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'size':<12}{'numpy ms':>10}{'numba ms':>10}{'speed-up':>10}")
    for name, label, call_args in cases(rng):
        f_np, f_nb = _kernels.NUMPY[name], _kernels.NUMBA[name]
        f_nb(*call_args)  # compile
        ref, got = f_np(*call_args), f_nb(*call_args)
        if isinstance(ref, tuple):
            ref, got = ref[0], got[0]
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-12)
        t_np = median_time(lambda: f_np(*call_args), args.reps)
        t_nb = median_time(lambda: f_nb(*call_args), args.reps)
        print(f"{name:<16}{label:<12}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
