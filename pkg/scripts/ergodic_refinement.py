"""Ergodic constant of the shifted-cosine eikonal model: PDE long-time slope vs the Mather LP."""

import argparse

import numpy as np

from holonomy.measures import solve_mather_lp
from holonomy.model import GridFunction, ModelSpec, TorusGrid, VelocityLattice, cosine_potential
from holonomy.pde import SolveConfig, large_time_profile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--T", type=float, default=200.0)
    args = ap.parse_args()
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0))
    print(f"{'N':>5} {'|Q|':>5} {'c_pde':>14} {'-LP':>14} {'gap':>11}")
    for N in args.sizes:
        grid = TorusGrid(1, N)
        n_q = N // 4 + 1
        lp = solve_mather_lp(model, grid, VelocityLattice(2.5, n_q))
        u0 = GridFunction(grid, 0.1 * np.sin(2 * np.pi * grid.points()[..., 0]))
        c = large_time_profile(model, u0, SolveConfig(T_final=args.T), tol=1e-9).c
        print(f"{N:>5} {n_q:>5} {c:>14.8f} {-lp.value:>14.8f} {abs(c + lp.value):>11.3e}")


if __name__ == "__main__":
    main()
