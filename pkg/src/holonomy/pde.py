"""Explicit monotone schemes for u_t - tr(A D^2 u) - eps Lap u + H(x, Du) = 0 on the torus.

Two spatial operators are available.  ``llf`` is a local Lax-Friedrichs
numerical Hamiltonian evaluated at the centered gradient.  ``lattice`` replaces
H by the velocity-lattice Hamiltonian max_j [q_j . D^up u - L(x, q_j)] with
upwinded differences; it is the exact dual of the occupation-measure LP and is
what the duality audits use.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import ConfigurationError, GridFunction, ModelSpec, TorusGrid, VelocityLattice
from .stencils import (NodalModel, backward_diff, forward_diff, lattice_time_step)


class CFLError(ConfigurationError):
    pass


class ConvergenceError(RuntimeError):
    """Large-time profile did not settle; carries the best ergodic-constant estimate."""

    def __init__(self, message: str, c_estimate: float, last_gap: float):
        super().__init__(message)
        self.c_estimate = c_estimate
        self.last_gap = last_gap


SPEED_FLOOR = 1e-3  # smallest LLF speed used for adaptive steps


@dataclass(frozen=True)
class SolveConfig:
    T_final: float
    cfl_safety: float = 0.9
    eps_viscosity: float = 0.0
    lf_dissipation: float | str = "auto"
    snapshot_times: tuple[float, ...] = ()
    scheme: str = "llf"
    velocity: VelocityLattice | None = None
    dt: float | None = None
    store_every_step: bool = False

    def __post_init__(self):
        if not self.T_final > 0:
            raise ConfigurationError("T_final must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError("cfl_safety must lie in (0, 1]")
        if self.eps_viscosity < 0:
            raise ConfigurationError("eps_viscosity must be nonnegative")
        if self.scheme not in ("llf", "lattice"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "lattice" and self.velocity is None:
            raise ConfigurationError("the lattice scheme needs a velocity lattice")
        if not (self.lf_dissipation == "auto" or float(self.lf_dissipation) >= 0):
            raise ConfigurationError("lf_dissipation must be 'auto' or a nonnegative number")


@dataclass
class Trajectory:
    model: ModelSpec
    grid: TorusGrid
    times: np.ndarray
    fields: list[GridFunction]
    eps_viscosity: float
    scheme: str = "llf"
    cfg: SolveConfig | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.fields):
            raise ValueError("times and fields differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def values(self, k: int) -> np.ndarray:
        return self.fields[k].values.ravel()

    def at_time(self, t: float) -> GridFunction:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t}")
        return self.fields[k]

    @property
    def final(self) -> GridFunction:
        return self.fields[-1]


@dataclass
class LLFParts:
    p_minus: np.ndarray
    p_plus: np.ndarray
    p_center: np.ndarray
    alpha: np.ndarray
    hhat: np.ndarray


def llf_parts(nodal: NodalModel, u: np.ndarray, alpha_fixed: float | None = None) -> LLFParts:
    """One-sided gradients, local dissipation and the numerical Hamiltonian."""
    grid = nodal.grid
    pm, pp = backward_diff(u, grid), forward_diff(u, grid)
    pc = 0.5 * (pm + pp)
    # |dH/dp_d| is extremal at a corner of the box spanned by the one-sided gradients
    alpha = np.zeros_like(pm)
    for choice in itertools.product((0, 1), repeat=grid.dim):
        corner = np.stack([pm[d] if c == 0 else pp[d] for d, c in enumerate(choice)])
        alpha = np.maximum(alpha, np.abs(nodal.grad_p(corner)))
    if alpha_fixed is not None:
        if alpha_fixed < alpha.max() * (1 - 1e-12):
            raise CFLError(f"lf_dissipation {alpha_fixed} below the observed speed {alpha.max():.6g}")
        alpha = np.full_like(alpha, alpha_fixed)
    hhat = nodal.hamiltonian(pc) - 0.5 * np.sum(alpha * (pp - pm), axis=0)
    return LLFParts(pm, pp, pc, alpha, hhat)


class LatticeHamiltonian:
    """max_j [q_j . D^up u - L(x, q_j)] at every node."""

    def __init__(self, nodal: NodalModel, vlat: VelocityLattice):
        self.nodal = nodal
        self.vlat = vlat
        self.q = vlat.velocities()
        self.L = np.stack([nodal.lagrangian(q) for q in self.q])  # (n_vel, size)

    def transport(self, u: np.ndarray) -> np.ndarray:
        """q_j . D^up u for every velocity, shape (n_vel, size)."""
        pm, pp = backward_diff(u, self.nodal.grid), forward_diff(u, self.nodal.grid)
        out = np.zeros((len(self.q), u.size))
        for d in range(self.nodal.grid.dim):
            qd = self.q[:, d:d + 1]
            out += np.where(qd >= 0, qd * pm[d], qd * pp[d])
        return out

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.max(self.transport(u) - self.L, axis=0)

    def argmax(self, u: np.ndarray) -> np.ndarray:
        return np.argmax(self.transport(u) - self.L, axis=0)


class Stepper:
    """Advances a flat nodal vector in time under one of the two schemes."""

    def __init__(self, model: ModelSpec, grid: TorusGrid, cfg: SolveConfig):
        self.model, self.grid, self.cfg = model, grid, cfg
        self.nodal = NodalModel(model, grid, cfg.eps_viscosity)
        self.speed_factor = max(model.m, 2.0)
        self.alpha_fixed = None if cfg.lf_dissipation == "auto" else float(cfg.lf_dissipation)
        self.lattice = LatticeHamiltonian(self.nodal, cfg.velocity) if cfg.scheme == "lattice" else None
        self.fixed_dt = None
        if cfg.scheme == "lattice":
            self.fixed_dt = lattice_time_step(self.nodal, cfg.velocity, cfg.cfl_safety)
        elif self.alpha_fixed is not None:
            self.fixed_dt = self._dt_for_speed(self.alpha_fixed)
        if cfg.dt is not None:
            if self.fixed_dt is not None and cfg.dt > self.fixed_dt * (1 + 1e-12):
                raise CFLError(f"requested dt={cfg.dt:.6g} exceeds the stability bound {self.fixed_dt:.6g}")
            self.fixed_dt = float(cfg.dt)

    def _dt_for_speed(self, speed: float) -> float:
        dim, h = self.grid.dim, self.grid.h
        return self.cfg.cfl_safety / (2 * dim * self.nodal.a_max / h**2 + speed * dim / h + 1e-300)

    def operator(self, u: np.ndarray) -> np.ndarray:
        """Spatial part: tr((A+eps) D^2 u) - Hhat(u)."""
        if self.lattice is not None:
            return self.nodal.diff @ u - self.lattice(u)
        return self.nodal.diff @ u - llf_parts(self.nodal, u, self.alpha_fixed).hhat

    def stable_dt(self, u: np.ndarray) -> float:
        if self.lattice is not None:
            return lattice_time_step(self.nodal, self.cfg.velocity, 1.0)
        parts = llf_parts(self.nodal, u, self.alpha_fixed)
        if self.alpha_fixed is not None:
            speed = self.alpha_fixed
        else:
            speed = self.speed_factor * float(parts.alpha.max())
        dim, h = self.grid.dim, self.grid.h
        return 1.0 / (2 * dim * self.nodal.a_max / h**2 + speed * dim / h + 1e-300)

    def next_dt(self, u: np.ndarray) -> float:
        if self.fixed_dt is not None:
            if self.cfg.dt is not None and self.cfg.scheme == "llf" and self.alpha_fixed is None:
                if self.fixed_dt > self.stable_dt(u) * (1 + 1e-12):
                    raise CFLError(f"dt={self.fixed_dt:.6g} violates the CFL bound {self.stable_dt(u):.6g}")
            return self.fixed_dt
        return self._adaptive_dt(u)

    def _adaptive_dt(self, u: np.ndarray) -> float:
        """CFL step whose speed also bounds the speed after the step.

        Flat data has zero local speed, so the bound at u alone allows an arbitrarily long
        step.  The speed is doubled until the trial step stays within it, so the accepted
        speed is within a factor 2 of the smallest consistent one.  The trial is kept for
        ``step``.
        """
        dim, h = self.grid.dim, self.grid.h
        parts = llf_parts(self.nodal, u)
        op = self.nodal.diff @ u - parts.hhat
        speed = self.speed_factor * float(parts.alpha.max())
        # floor far above roundoff: near-flat data must not make the doubling test noise-driven
        speed = max(speed, SPEED_FLOOR)
        while True:
            dt = self.cfg.cfl_safety / (2 * dim * self.nodal.a_max / h**2 + speed * dim / h)
            trial = u + dt * op
            after = float(llf_parts(self.nodal, trial).alpha.max())
            if after <= speed * (1 + 1e-12):
                self._cached = (u, dt, trial)
                return dt
            speed *= 2.0

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        cached = getattr(self, "_cached", None)
        if cached is not None and cached[0] is u and cached[1] == dt:
            return cached[2]
        return u + dt * self.operator(u)


def _snapshot_schedule(cfg: SolveConfig) -> list[float]:
    ts = sorted({float(t) for t in cfg.snapshot_times if 0 < t < cfg.T_final} | {float(cfg.T_final)})
    return ts


def solve_cauchy(model: ModelSpec, u0: GridFunction, cfg: SolveConfig) -> Trajectory:
    grid = u0.grid
    stepper = Stepper(model, grid, cfg)
    u = u0.values.ravel().copy()
    stepper.next_dt(u)  # raises before any stepping when the requested dt is unstable
    times, fields = [0.0], [u0]
    t = 0.0
    for target in _snapshot_schedule(cfg):
        while t < target - 1e-12 * max(1.0, target):
            dt = stepper.next_dt(u)
            if t + dt >= target - 1e-12 * max(1.0, target):
                dt, t_new = target - t, target
            else:
                t_new = t + dt
            u = stepper.step(u, dt)
            t = t_new
            if cfg.store_every_step and t < target:
                times.append(t)
                fields.append(GridFunction(grid, u.reshape(grid.shape)))
        times.append(target)
        fields.append(GridFunction(grid, u.reshape(grid.shape)))
    return Trajectory(model, grid, np.array(times), fields, cfg.eps_viscosity, cfg.scheme, cfg)


def residual(model: ModelSpec, traj: Trajectory, t_index: int) -> GridFunction:
    """Centered-in-time defect u_t - tr((A+eps) D^2 u) + Hhat(u) at an interior snapshot."""
    if not 0 < t_index < len(traj.times) - 1:
        raise IndexError(f"t_index must lie strictly inside [0, {len(traj.times) - 1}]")
    cfg = traj.cfg or SolveConfig(T_final=float(traj.times[-1]), eps_viscosity=traj.eps_viscosity)
    stepper = Stepper(model, traj.grid, cfg)
    ut = (traj.values(t_index + 1) - traj.values(t_index - 1)) / (traj.times[t_index + 1] - traj.times[t_index - 1])
    r = ut - stepper.operator(traj.values(t_index))
    return GridFunction(traj.grid, r.reshape(traj.grid.shape))


@dataclass
class ProfileResult:
    u_inf: GridFunction
    c: float
    T_reached: float
    log: list[tuple[float, float, float]] = field(default_factory=list)  # (time, sup change, mean)

    def __iter__(self):
        return iter((self.u_inf, self.c, self.T_reached))


def large_time_profile(model: ModelSpec, u0: GridFunction, cfg: SolveConfig, tol: float | None = None,
                       interval: float = 1.0) -> ProfileResult:
    """Run until successive shifted snapshots u(t) + c t agree to ``tol`` in sup norm."""
    if tol is None:
        tol = 1e-4 * (1 + u0.sup_norm())
    grid = u0.grid
    stepper = Stepper(model, grid, cfg)
    u = u0.values.ravel().copy()
    t = 0.0
    prev_u, prev_t = u.copy(), 0.0
    c, gap = math.nan, math.inf
    log = [(0.0, math.nan, float(u.mean()))]
    while t < cfg.T_final - 1e-12:
        target = min(prev_t + interval, cfg.T_final)
        while t < target - 1e-12 * max(1.0, target):
            dt = min(stepper.next_dt(u), target - t)
            u = stepper.step(u, dt)
            t = target if abs(target - (t + dt)) < 1e-12 * max(1.0, target) else t + dt
        c = -(u.mean() - prev_u.mean()) / (t - prev_t)
        gap = float(np.max(np.abs((u + c * t) - (prev_u + c * prev_t))))
        log.append((t, gap, float(u.mean())))
        if gap < tol:
            u_inf = GridFunction(grid, (u + c * t).reshape(grid.shape))
            return ProfileResult(u_inf, float(c), float(t), log)
        prev_u, prev_t = u.copy(), t
    raise ConvergenceError(f"profile not converged by T={cfg.T_final}: last gap {gap:.3e}, c~{c:.6g}",
                           float(c), float(gap))


# ---------------------------------------------------------------------------
# superquadratic barrier and compactness


@dataclass
class BarrierResult:
    lam: float
    min_margin: float
    theta: float

    def __iter__(self):
        return iter((self.lam, self.min_margin))


def check_superquadratic_barrier(m: float, C: float, n: int = 1, z_grid: int = 1001,
                                 lam_cap: float = 2.0**60) -> BarrierResult:
    """Doubling search for lambda making the scalar supersolution inequalities strict.

    With theta = (m'/2 - 1/(m-1))/2, lambda must satisfy lambda m'/2 - C >= lambda (1/(m-1) + theta)
    and (lambda^(m-1)/C) z^(m/2) + theta - (1/(m-1) + theta) z > 0 on z in [0, 1].
    """
    if not m > 2:
        raise ConfigurationError("the barrier needs m > 2")
    if C <= 0 or z_grid < 2:
        raise ConfigurationError("C must be positive and z_grid at least 2")
    mc = m / (m - 1)
    theta = 0.5 * (mc / 2 - 1 / (m - 1))
    z = np.linspace(0.0, 1.0, z_grid)
    lam = 1.0
    while lam <= lam_cap:
        linear_ok = lam * mc / 2 - C >= lam * (1 / (m - 1) + theta)
        margin = float(np.min((lam ** (m - 1) / C) * z ** (m / 2) + theta - (1 / (m - 1) + theta) * z))
        if linear_ok and margin > 0:
            return BarrierResult(lam, margin, theta)
        lam *= 2.0
    raise OverflowError(f"no admissible lambda up to {lam_cap:g} for m={m}, C={C}")


def random_trig_data(grid: TorusGrid, rng: np.random.Generator, degree: int = 4, scale: float = 1.0,
                     flat_fraction: float = 0.0) -> GridFunction:
    """Trigonometric polynomial with uniform [-1, 1] coefficients, shifted to min 0, then scaled.

    flat_fraction > 0 cuts the polynomial at that quantile so the zero set covers a fraction of
    the nodes; this keeps large scales resolved at the minimum.
    """
    x = grid.points().reshape(-1, grid.dim)
    vals = np.zeros(len(x))
    for k in itertools.product(range(-degree, degree + 1), repeat=grid.dim):
        if all(v == 0 for v in k) or sum(abs(v) for v in k) > degree:
            continue
        phase = 2 * np.pi * (x @ np.asarray(k, dtype=float))
        vals += rng.uniform(-1, 1) * np.cos(phase) + rng.uniform(-1, 1) * np.sin(phase)
    if flat_fraction > 0:
        vals = np.maximum(vals - np.quantile(vals, flat_fraction), 0.0)
    else:
        vals -= vals.min()
    return GridFunction(grid, (scale * vals).reshape(grid.shape))


@dataclass
class CompactnessReport:
    scales: list[float]
    sup_norms: list[float]
    bound: float
    spread: float  # max/min of per-scale sup norms at t = 1/2

    def summary(self) -> str:
        rows = [f"  scale {s:>8g}: |u(1/2)|_inf = {v:.6g}" for s, v in zip(self.scales, self.sup_norms)]
        return "\n".join(rows + [f"  bound {self.bound:.6g}, spread factor {self.spread:.4g}"])


def compactness_smoke(model: ModelSpec, K: int, cfg: SolveConfig, grid: TorusGrid,
                      scales: Sequence[float] = (1.0, 10.0, 100.0, 1000.0), seed: int = 0,
                      zero_data: bool = False, flat_fraction: float = 0.3) -> CompactnessReport:
    """Sup norms at t = 1/2 for K random data with min 0 spread over the given scales."""
    if not model.m > 2:
        raise ConfigurationError("compactness smoke test requires m > 2")
    if K < 1:
        raise ConfigurationError("K must be positive")
    rng = np.random.default_rng(seed)
    run_cfg = replace(cfg, T_final=0.5, snapshot_times=(), store_every_step=False)
    used, sups = [], []
    for k in range(K):
        scale = float(scales[k % len(scales)])
        u0 = GridFunction(grid, np.zeros(grid.shape)) if zero_data else random_trig_data(grid, rng, scale=scale,
                                                                                    flat_fraction=flat_fraction)
        traj = solve_cauchy(model, u0, run_cfg)
        used.append(0.0 if zero_data else scale)
        sups.append(traj.final.sup_norm())
    spread = max(sups) / max(min(sups), 1e-300)
    return CompactnessReport(used, sups, max(sups), spread)
