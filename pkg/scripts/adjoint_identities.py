"""Adjoint Fokker-Planck run: holonomy defect of the built occupation measure and the value identity gap."""

import argparse

import numpy as np

from holonomy.adjoint import build_gamma, solve_adjoint_fp, verify_holonomy, verify_value_identity
from holonomy.measures import DiscreteMeasure
from holonomy.model import GridFunction, ModelSpec, TorusGrid, cosine_potential
from holonomy.pde import SolveConfig, solve_cauchy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    args = ap.parse_args()
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0)
    for N in args.sizes:
        grid = TorusGrid(1, N)
        u0 = GridFunction(grid, np.sin(2 * np.pi * grid.points()[..., 0]))
        traj = solve_cauchy(model, u0, SolveConfig(T_final=1.0, eps_viscosity=1.0 / N, store_every_step=True))
        nu1 = DiscreteMeasure.uniform(grid)
        run = solve_adjoint_fp(model, traj, nu1)
        occ = build_gamma(model, traj, run)
        defect = verify_holonomy(model, occ, run.nu0, nu1, run.eps, "scheme", run)
        gap = verify_value_identity(model, occ, run, traj)
        print(f"N={N:<4} holonomy defect {defect:.2e}  value identity gap {gap:.3e}")


if __name__ == "__main__":
    main()
