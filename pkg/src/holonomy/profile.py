"""Representation formula and large-time profile, checked against free-source LPs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import (FREE, DiscreteMeasure, Discretization, MeasureLP, build_spacetime_constraints,
                       solve_free_source, solve_ht_lp)
from .model import GridFunction, ModelSpec
from .pde import SolveConfig, large_time_profile, solve_cauchy


def free_source_lp(model: ModelSpec, disc: Discretization, u0: GridFunction, nu: DiscreteMeasure, t: float,
                   solver: str = "backward") -> MeasureLP:
    """min sum L gamma + <u0, nu0> over gamma with terminal nu and free source nu0."""
    system = build_spacetime_constraints(model, disc, t, nu, FREE)
    if solver == "backward":
        res = solve_free_source(system, u0.values)
    elif solver == "highs":
        res = solve_ht_lp(system, u0.values)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    if not res.feasible:
        raise RuntimeError("free-source LP infeasible; the free-source set is never empty")
    return res


@dataclass
class Comparison:
    lhs: float
    rhs: float
    gap: float
    detail: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.gap))


def verify_representation(model: ModelSpec, u0: GridFunction, nu: DiscreteMeasure, t: float, cfg: SolveConfig,
                          disc: Discretization, solver: str = "backward") -> Comparison:
    """<u(t), nu> from the PDE scheme against the free-source LP value."""
    traj = solve_cauchy(model, u0, SolveConfig(**{**cfg.__dict__, "T_final": t, "snapshot_times": ()}))
    lhs = nu.pair(traj.final.values)
    lp = free_source_lp(model, disc, u0, nu, t, solver)
    return Comparison(lhs, lp.value, abs(lhs - lp.value), {"lp": lp, "certificate": lp.solution.duality_gap})


@dataclass
class ProfileRHS:
    value: float
    t_star: float | None
    nu0_star: np.ndarray | None
    table: list[tuple[float, float]]

    def __iter__(self):
        return iter((self.value, self.t_star, self.nu0_star))


def rhs_profile(model: ModelSpec, disc: Discretization, u0: GridFunction, nu: DiscreteMeasure,
                horizons: Sequence[float], solver: str = "backward") -> ProfileRHS:
    table, best = [], (math.inf, None, None)
    for t in horizons:
        res = free_source_lp(model, disc, u0, nu, t, solver)
        table.append((float(t), res.value))
        if res.value < best[0]:
            best = (res.value, float(t), res.nu0)
    return ProfileRHS(best[0], best[1], best[2], table)


def verify_profile(model: ModelSpec, u0: GridFunction, nu: DiscreteMeasure, horizons: Sequence[float],
                   cfg: SolveConfig, disc: Discretization, tol: float | None = None,
                   solver: str = "backward") -> Comparison:
    """<u_inf, nu> against min over horizons of the free-source LP; budget h + dq + dt + 1/t_max."""
    prof = large_time_profile(model, u0, cfg, tol)
    lhs = nu.pair(prof.u_inf.values)
    rhs = rhs_profile(model, disc, u0, nu, horizons, solver)
    budget = disc.grid.h + disc.vlat.spacing + disc.time_step(model) + 1.0 / max(horizons)
    return Comparison(lhs, rhs.value, abs(lhs - rhs.value),
                      {"c": prof.c, "T_reached": prof.T_reached, "t_star": rhs.t_star, "table": rhs.table,
                       "budget": budget, "nu0_star": rhs.nu0_star})
