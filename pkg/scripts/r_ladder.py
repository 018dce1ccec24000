"""Derived constants along r = 0.1R, ..., 0.9R with sigma and q fixed.

k is taken at 95 % of its bound on every rung.
"""
import argparse

from spillfree.cli import ladder_trends, r_ladder
from spillfree.model import PhysicalParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hmax", type=float, default=4.0)
    ap.add_argument("--mu", type=float, default=1.0)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--q", type=float, default=1.0)
    args = ap.parse_args()

    p = PhysicalParams(g=1.0, mu=args.mu, L=1.0, m=1.0, H_max=args.hmax)
    rows = r_ladder(p, [round(0.1 * i, 1) for i in range(1, 10)], args.sigma, args.q)
    print(f"{'r/R':>5} {'k_bound':>12} {'omega':>12} {'Gamma_r':>12} {'lambda':>12} {'M':>12}")
    for r in rows:
        if not r["feasible"]:
            print(f"{r['r_frac']:5.1f} {r['k_bound']:12.5g}  infeasible: {r['error']}")
            continue
        print(f"{r['r_frac']:5.1f} {r['k_bound']:12.5g} {r['omega']:12.5g} {r['Gamma_r']:12.5g} "
              f"{r['lam']:12.5g} {r['M']:12.5g}")
    for name, ok in ladder_trends(rows).items():
        print(f"{name}: {ok}")


if __name__ == "__main__":
    main()
