"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py --rows 200000 --repeat 5

Each kernel is run once untimed (JIT warm-up), then timed ``--repeat`` times;
the best time is reported with the max abs difference between backends.
"""

import argparse
import time

import numpy as np

from bdsde_rmc import _kernels as K


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases(rows, q, n):
    rng = np.random.default_rng(0)
    cols = rng.integers(0, n, size=(rows, q))
    vals = rng.normal(size=(rows, q))
    x = rng.normal(size=rows)
    theta = rng.normal(size=n)
    m = np.arange(rows, dtype=np.uint64)[:, None]
    k = np.arange(4, dtype=np.uint64)[None, :]
    return {
        "counter_normals": (lambda: K.np_counter_normals(7, m, k, 0), lambda: K.nb_counter_normals(7, m, k, 0)),
        "gram_accumulate": (lambda: K.np_gram_accumulate(cols, vals, n), lambda: K.nb_gram_accumulate(cols, vals, n)),
        "sparse_rmatvec": (lambda: K.np_sparse_rmatvec(cols, vals, x, n), lambda: K.nb_sparse_rmatvec(cols, vals, x, n)),
        "sparse_matvec": (lambda: K.np_sparse_matvec(cols, vals, theta), lambda: K.nb_sparse_matvec(cols, vals, theta)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--nnz", type=int, default=8, help="stored entries per row")
    ap.add_argument("--dim", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    print(f"rows={args.rows} nnz/row={args.nnz} dim={args.dim} (active backend: {K.backend()})")
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}{'max |diff|':>13}")
    for name, (f_np, f_nb) in cases(args.rows, args.nnz, args.dim).items():
        t_np, a = best_of(f_np, args.repeat)
        t_nb, b = best_of(f_nb, args.repeat)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:<18}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
