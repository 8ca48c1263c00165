"""Compare the numba and numpy paths of the hot kernels.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--csv out.csv]

Each kernel is run once untimed (so numba compiles), then timed with
``timeit`` on both paths.  Outputs are checked for agreement first.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from netprompt import _kernels as K


def css_case(rng, n=5000):
    w = rng.standard_normal(n)
    return (w, 0.01, np.array([0.5, -0.3]), np.array([0.4, 0.2]))


def bin_case(rng, n_rows=2_000_000, n_cells=10_000, n_hours=200):
    return (rng.integers(0, n_cells, n_rows), rng.integers(0, n_hours, n_rows), rng.random(n_rows), n_cells, n_hours)


def rates_case(rng, n_users=2000, n_bs=7):
    gains = 10.0 ** (-rng.uniform(8, 13, size=(n_users, n_bs)))
    serving = rng.integers(0, n_bs, n_users)
    return (rng.uniform(0.1, 40, n_bs), gains, serving, np.full(n_users, 1e6), 1e-13)


CASES = {
    "css_residuals": (css_case, K.css_residuals_numpy, K.css_residuals_numba),
    "bin_hourly": (bin_case, K.bin_hourly_numpy, K.bin_hourly_numba),
    "user_rates": (rates_case, K.user_rates_numpy, K.user_rates_numba),
}


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="also write results here")
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1

    rows = []
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<15}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, (make, f_np, f_nb) in CASES.items():
        case = make(rng)
        a, b = _flatten(f_np(*case)), _flatten(f_nb(*case))    # also compiles
        diff = float(np.max(np.abs(a - b)))
        t_np = min(timeit.repeat(lambda: f_np(*case), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*case), number=1, repeat=args.repeat)) * 1e3
        rows.append((name, t_np, t_nb, t_np / t_nb, diff))
        print(f"{name:<15}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>10.2f}{diff:>14.3g}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "numpy_ms", "numba_ms", "speedup", "max_abs_diff"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
