"""Residual of the mollified solution as a subsolution, as a function of the kernel width."""

import argparse

import numpy as np

from holonomy.approx import subsolution_residual_scan
from holonomy.model import Diffusion, GridFunction, ModelSpec, TorusGrid, cosine_potential
from holonomy.pde import SolveConfig, solve_cauchy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--T", type=float, default=0.5)
    args = ap.parse_args()
    grid = TorusGrid(1, args.N)
    x = grid.points()[..., 0]
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0,
                      diffusion=Diffusion("sin2", 0.1))
    traj = solve_cauchy(model, GridFunction(grid, -np.minimum(x, 1 - x)),
                        SolveConfig(T_final=args.T, lf_dissipation=4.0, store_every_step=True))
    scan = subsolution_residual_scan(model, traj, [2.0 ** -k for k in range(3, 8)])
    for a, r in zip(scan.alphas, scan.residuals):
        print(f"alpha {a:<10g} r {r:.6e}")
    print("exponent undefined" if scan.undefined else f"fitted exponent {scan.exponent:.3f}",
          f"(floor {scan.floor:.2e})")


if __name__ == "__main__":
    main()
