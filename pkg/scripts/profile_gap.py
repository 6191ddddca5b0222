"""<u_inf, nu> for a Mather measure nu against the minimum over horizons of the free-source LP."""

import argparse

import numpy as np

from holonomy.measures import Discretization, divisible_time_step, project_measure, solve_mather_lp
from holonomy.model import GridFunction, ModelSpec, TorusGrid, VelocityLattice, cosine_potential
from holonomy.pde import SolveConfig
from holonomy.profile import verify_profile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--horizons", type=float, nargs="+", default=[1, 2, 4, 8])
    args = ap.parse_args()
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0)
    for N in args.sizes:
        grid = TorusGrid(1, N)
        vlat = VelocityLattice(2.5, {16: 9, 32: 11, 64: 15}.get(N, N // 4 + 1))
        nu = project_measure(solve_mather_lp(model, grid, vlat).measure)
        disc = Discretization(grid, vlat, 0.0, divisible_time_step(model, grid, vlat, 0.0))
        u0 = GridFunction(grid, np.sin(2 * np.pi * grid.points()[..., 0]))
        cmp = verify_profile(model, u0, nu, args.horizons, SolveConfig(T_final=60.0), disc)
        print(f"N={N:<4} lhs {cmp.lhs:.8f}  rhs {cmp.rhs:.8f}  gap {cmp.gap:.3e}  "
              f"budget {cmp.detail['budget']:.3e}  t* {cmp.detail['t_star']}")


if __name__ == "__main__":
    main()
