"""Dual-side values over finite families of stationary and evolving solutions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .measures import DiscreteMeasure, MeasureLP
from .model import ConfigurationError, GridFunction, ModelSpec, TorusGrid
from .pde import ConvergenceError, SolveConfig, Trajectory, large_time_profile, random_trig_data, solve_cauchy


@dataclass
class SolutionFamily:
    kind: str  # "stationary" or "evolving"
    members: list
    provenance: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def add(self, member, label: str) -> None:
        self.members.append(member)
        self.provenance.append(label)


def generate_solution_family(model: ModelSpec, seeds: Sequence[GridFunction], cfg: SolveConfig,
                             kind: str = "stationary", tol: float | None = None,
                             dedup: float = 1e-3, interval: float = 1.0) -> SolutionFamily:
    """Stationary members are large-time profiles, deduplicated modulo constants; evolving members are trajectories."""
    if not len(seeds):
        raise ValueError("empty seed list")
    if kind not in ("stationary", "evolving"):
        raise ConfigurationError(f"unknown family kind {kind!r}")
    fam = SolutionFamily(kind, [], [])
    for idx, u0 in enumerate(seeds):
        if kind == "evolving":
            fam.add(solve_cauchy(model, u0, cfg), f"seed {idx}")
            continue
        try:
            prof = large_time_profile(model, u0, cfg, tol, interval)
        except ConvergenceError as exc:
            warnings.warn(f"seed {idx} dropped: {exc}", RuntimeWarning)
            continue
        w = prof.u_inf.values
        centered = w - w.mean()
        if any(np.max(np.abs(centered - (v.values - v.values.mean()))) < dedup for v in fam.members):
            continue
        fam.add(prof.u_inf, f"seed {idx}")
    return fam


def _require(family: SolutionFamily, kind: str) -> None:
    if family.kind != kind:
        raise ValueError(f"expected a {kind} family, got {family.kind}")
    if not len(family):
        raise ValueError("empty family")


def m_function(family: SolutionFamily, nu0: DiscreteMeasure, nu1: DiscreteMeasure) -> float:
    _require(family, "stationary")
    return max(nu1.pair(w.values) - nu0.pair(w.values) for w in family.members)


def dual_value_ht(family: SolutionFamily, nu0: DiscreteMeasure, nu1: DiscreteMeasure, t: float) -> float:
    _require(family, "evolving")
    best = -math.inf
    for traj in family.members:
        if traj.times[-1] < t - 1e-9:
            raise ValueError(f"trajectory ends at {traj.times[-1]} before t={t}")
        best = max(best, nu1.pair(traj.at_time(t).values) - nu0.pair(traj.at_time(0.0).values))
    return best


def dual_value_d(family: SolutionFamily, nu0: DiscreteMeasure, nu1: DiscreteMeasure) -> float:
    return m_function(family, nu0, nu1)


def trajectory_from_duals(model: ModelSpec, lp: MeasureLP) -> Trajectory:
    """Reshape the LP multipliers of a space-time system into a test-function trajectory."""
    system = lp.system
    if system.mode != "spacetime" or lp.solution.duals is None:
        raise ValueError("need an optimal space-time LP")
    grid = system.disc.grid
    levels = lp.solution.duals[:(system.K + 1) * system.n].reshape(system.K + 1, *grid.shape)
    times = np.arange(system.K + 1) * system.dt
    return Trajectory(model, grid, times, [GridFunction(grid, v) for v in levels], system.disc.eta, "lp-dual")


def stationary_from_duals(lp: MeasureLP) -> GridFunction:
    """Multipliers of the stationary Mather LP: a lattice subsolution for c_h = -value, exact on the support."""
    system = lp.system
    if system.mode != "stationary":
        raise ValueError("need a stationary LP")
    return GridFunction(system.disc.grid, lp.solution.duals[:system.n].reshape(system.disc.grid.shape))


def monotone_value_check(model: ModelSpec, phi: GridFunction, nu0: DiscreteMeasure, cfg: SolveConfig) -> float:
    """Largest increase of t -> <u(t), nu0> between consecutive snapshots (negative if strictly decreasing)."""
    traj = solve_cauchy(model, phi, cfg)
    vals = np.array([nu0.pair(f.values) for f in traj.fields])
    return float(np.max(np.diff(vals)))


@dataclass
class UniformConvergenceReport:
    T_common: float
    per_sample: list[tuple[float, float]]  # (scale, T_i)
    offending: int | None = None


def uniform_convergence_test(model: ModelSpec, K: int, eps: float, cfg: SolveConfig, grid: TorusGrid,
                             scales: Sequence[float] = (1.0, 10.0, 100.0, 1000.0), seed: int = 0,
                             interval: float = 0.25) -> UniformConvergenceReport:
    """Smallest T with |u(t) + c t - u_inf| < eps on [T, T_final] simultaneously for K random data."""
    if K < 1:
        raise ValueError("K must be positive")
    if not (model.m > 2 or (not model.diffusion.is_matrix and model.diffusion.kind == "constant"
                            and model.diffusion.coef == 0)):
        raise ConfigurationError("uniform convergence needs m > 2 or a = 0")
    rng = np.random.default_rng(seed)
    times = tuple(np.arange(interval, cfg.T_final + 1e-12, interval))
    run_cfg = replace(cfg, snapshot_times=times, store_every_step=False)
    rows = []
    for k in range(K):
        scale = float(scales[k % len(scales)])
        u0 = random_trig_data(grid, rng, scale=scale)
        traj = solve_cauchy(model, u0, run_cfg)
        t_a, t_b = traj.times[-2], traj.times[-1]
        c = -(traj.values(-1).mean() - traj.values(-2).mean()) / (t_b - t_a)
        shifted = [traj.values(i) + c * traj.times[i] for i in range(len(traj.times))]
        u_inf = shifted[-1]
        dist = np.array([np.max(np.abs(s - u_inf)) for s in shifted])
        bad = np.where(dist >= eps)[0]
        if len(bad) and bad[-1] >= len(dist) - 2:
            raise ConvergenceError(f"sample {k} (scale {scale}) not within {eps} of its profile by T_final",
                                   float(c), float(dist[-2]))
        T_i = float(traj.times[bad[-1] + 1]) if len(bad) else 0.0
        rows.append((scale, T_i))
    T_common = max(t for _, t in rows)
    worst = int(np.argmax([t for _, t in rows]))
    return UniformConvergenceReport(T_common, rows, worst)
