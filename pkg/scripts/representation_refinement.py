"""Gap between <u(t), nu> from the viscous PDE and the free-source LP under grid refinement."""

import argparse

import numpy as np

from holonomy.measures import DiscreteMeasure, Discretization, divisible_time_step
from holonomy.model import GridFunction, ModelSpec, TorusGrid, VelocityLattice, cosine_potential
from holonomy.pde import SolveConfig
from holonomy.profile import verify_representation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--t", type=float, default=1.0)
    args = ap.parse_args()
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0)
    prev = None
    for N in args.sizes:
        grid, vlat = TorusGrid(1, N), VelocityLattice(2.5, 33)
        eta = 1.0 / N
        disc = Discretization(grid, vlat, eta, divisible_time_step(model, grid, vlat, eta))
        u0 = GridFunction(grid, np.sin(2 * np.pi * grid.points()[..., 0]))
        res = verify_representation(model, u0, DiscreteMeasure.uniform(grid), args.t,
                                    SolveConfig(T_final=args.t, eps_viscosity=eta), disc)
        ratio = "" if prev is None else f"  ratio {prev / res.gap:.2f}"
        print(f"N={N:<4} PDE {res.lhs:.8f}  LP {res.rhs:.8f}  gap {res.gap:.3e}{ratio}")
        prev = res.gap


if __name__ == "__main__":
    main()
