"""Grid refinement study of the closed-loop solver.

Runs the same smooth initial condition on N, 2N, 4N, ... cells to a fixed time
and prints the L2 errors against the finest run with the observed orders.
"""
import argparse

from spillfree.functionals import Gains, compute_R
from spillfree.model import Grid, PhysicalParams, make_initial_condition
from spillfree.solver import SolverConfig, simulate
from spillfree.verify import convergence_orders


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=25, help="coarsest grid")
    ap.add_argument("--levels", type=int, default=4, help="number of grids, finest is the reference")
    ap.add_argument("--t-end", type=float, default=0.2)
    ap.add_argument("--open-loop", action="store_true")
    args = ap.parse_args()

    p = PhysicalParams(g=1.0, mu=1.0, L=1.0, m=1.0, H_max=4.0)
    gains = None if args.open_loop else Gains(sigma=10.0, q=10.0, k=0.5, r=0.5 * compute_R(p))
    finals = []
    for lev in range(args.levels):
        N = args.N * 2**lev
        grid = Grid(p.L, N)
        s = make_initial_condition(p, grid, "combined", 0.1, 1, 0.2, 0.0, velocity_amplitude=0.1)
        traj = simulate(s, p, gains, grid, SolverConfig(t_end=args.t_end, record_every=10**6))
        finals.append(traj.final)
        print(f"N={N:5d} steps={traj.steps}")
    errs, orders = convergence_orders(finals, p.L)
    for lev, e in enumerate(errs):
        print(f"N={args.N * 2**lev:5d} error={e:.4e}")
    print("orders:", " ".join(f"{o:.3f}" for o in orders))


if __name__ == "__main__":
    main()
