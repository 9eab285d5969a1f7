"""Block exceedance rates across rho, with one output file per run.

    python scripts/phase_sweep.py --n 100000 --reps 3000 --out results/sweep.csv

Writes the result rows and a plot-data file (rho, rate, 95% interval); the
target curve (1 - 2 rho beta) qF2 is printed alongside.
"""

import argparse

from doublestable import cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10**5)
    ap.add_argument("--reps", type=int, default=3000)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.2, 0.35, 0.5, 0.65, 0.8])
    ap.add_argument("--y", type=float, nargs="+", default=[1.0])
    ap.add_argument("--m", type=int, default=None, help="shared truncation (one path set for every rho)")
    ap.add_argument("--parallelism", type=int, default=1)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--cache-dir", default=".table-cache")
    ap.add_argument("--out", default="results/sweep.csv")
    a = ap.parse_args()
    argv = ["phase-sweep", "--n", str(a.n), "--reps", str(a.reps), "--seed", str(a.seed),
            "--parallelism", str(a.parallelism), "--cache-dir", a.cache_dir, "--out", a.out, "--plot-data"]
    argv += [tok for r in a.rho for tok in ("--rho", str(r))]
    argv += [tok for y in a.y for tok in ("--y", str(y))]
    if a.m is not None:
        argv += ["--m", str(a.m)]
    raise SystemExit(cli.main(argv))


if __name__ == "__main__":
    main()
