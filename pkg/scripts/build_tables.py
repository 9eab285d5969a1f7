"""Tabulate renewal quantities for several beta and export them.

    python scripts/build_tables.py --beta 0.1 0.3 0.45 --horizon 1000000 --out tables/
"""

import argparse
import time
from pathlib import Path

from doublestable import build_tables, make_renewal_law, save_tables


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--beta", type=float, nargs="+", default=[0.1, 0.3, 0.45])
    ap.add_argument("--horizon", type=int, default=10**6)
    ap.add_argument("--out", default="tables")
    ap.add_argument("--format", choices=("npz", "csv"), default="npz")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("beta,horizon,qF2,q_lower,q_upper,seconds")
    for beta in args.beta:
        t0 = time.perf_counter()
        t = build_tables(make_renewal_law(beta), args.horizon)
        save_tables(t, out / f"tables_beta{beta}_N{args.horizon}.{args.format}")
        print(f"{beta},{args.horizon},{t.qF2:.8f},{t.q_lower:.8f},{t.q_upper:.8f},{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
