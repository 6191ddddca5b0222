"""Occupation-measure linear programs on grid x velocity (x time) atoms.

An atom (x_i, q_j) acts on a nodal test function through the generator
q_j . D^up phi - (A + eta) D^2 phi, using the same stencils as the lattice
scheme in :mod:`holonomy.pde`.  In the space-time problems the weight of an
atom at step k is its gamma mass (density times dt), and the generator acts on
the level-k test function while the time difference couples levels k and k+1.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .lp import INFEASIBLE, OPTIMAL, LPSolution, feasibility_defects, solve_equality_lp
from .model import ConfigurationError, ModelSpec, TorusGrid, VelocityLattice
from .stencils import NodalModel, backward_matrix, forward_matrix, lattice_time_step, upwind_velocity_matrix

FREE = "free"


@dataclass(frozen=True)
class DiscreteMeasure:
    grid: TorusGrid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != self.grid.size:
            raise ValueError("measure size does not match the grid")
        if np.any(w < -1e-12) or abs(w.sum() - 1) > 1e-8:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "weights", w)

    @classmethod
    def point(cls, grid: TorusGrid, node) -> "DiscreteMeasure":
        w = np.zeros(grid.shape)
        w[tuple(np.atleast_1d(node))] = 1.0
        return cls(grid, w)

    @classmethod
    def uniform(cls, grid: TorusGrid) -> "DiscreteMeasure":
        return cls(grid, np.full(grid.size, 1.0 / grid.size))

    def mix(self, other: "DiscreteMeasure", lam: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.grid, lam * self.weights + (1 - lam) * other.weights)

    def pair(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, np.asarray(values).ravel()))


@dataclass(frozen=True)
class Discretization:
    """Grid, velocity lattice, extra viscosity eta and (space-time) time step."""

    grid: TorusGrid
    vlat: VelocityLattice
    eta: float = 0.0
    dt: float | None = None
    cfl: float = 1.0

    def time_step(self, model: ModelSpec) -> float:
        if self.dt is not None:
            return float(self.dt)
        return lattice_time_step(NodalModel(model, self.grid, self.eta), self.vlat, self.cfl)

    def steps(self, model: ModelSpec, t: float) -> int:
        dt = self.time_step(model)
        K = int(round(t / dt))
        if K < 1 or abs(K * dt - t) > 1e-9 * max(1.0, t):
            raise ConfigurationError(f"horizon t={t} is not a multiple of dt={dt:.12g}")
        return K


def divisible_time_step(model: ModelSpec, grid: TorusGrid, vlat: VelocityLattice, eta: float,
                        base: float = 1.0, cfl: float = 1.0) -> float:
    """Largest stable dt of the form base / integer, so every multiple of ``base`` is a horizon."""
    dt = lattice_time_step(NodalModel(model, grid, eta), vlat, cfl)
    return base / math.ceil(base / dt - 1e-12)


@functools.lru_cache(maxsize=32)
def atom_generators(model: ModelSpec, grid: TorusGrid, vlat: VelocityLattice, eta: float):
    """Per velocity j: M_j = q_j . D^up - (A + eta) D^2, and the Lagrangian at every node."""
    nodal = NodalModel(model, grid, eta)
    qs = vlat.velocities()
    gens = [(upwind_velocity_matrix(grid, q) - nodal.diff).tocsr() for q in qs]
    costs = np.stack([nodal.lagrangian(q) for q in qs])
    return qs, gens, costs


@dataclass
class HolonomyConstraintSystem:
    mode: str
    model: ModelSpec
    disc: Discretization
    generators: list
    costs: np.ndarray  # (n_vel, n)
    dt: float | None = None
    K: int | None = None
    nu1: np.ndarray | None = None
    nu0: np.ndarray | str | None = None
    _matrix: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.disc.grid.size

    @property
    def n_vel(self) -> int:
        return len(self.generators)

    @property
    def free_source(self) -> bool:
        return isinstance(self.nu0, str) and self.nu0 == FREE

    @property
    def n_atoms(self) -> int:
        if self.mode == "stationary":
            return self.n_vel * self.n
        return self.K * self.n_vel * self.n

    @property
    def n_vars(self) -> int:
        return self.n_atoms + (self.n if self.free_source else 0)

    def rhs(self) -> np.ndarray:
        n = self.n
        if self.mode == "stationary":
            b = np.zeros(n + 1)
            b[-1] = 1.0
            return b
        b = np.zeros((self.K + 1) * n + (1 if self.free_source else 0))
        b[self.K * n:(self.K + 1) * n] = self.nu1
        if self.free_source:
            b[-1] = 1.0
        else:
            b[:n] -= self.nu0
        return b

    def cost(self, u0: np.ndarray | None = None) -> np.ndarray:
        c = self.costs.ravel()
        if self.mode == "spacetime":
            c = np.tile(c, self.K)
        if self.free_source:
            c = np.concatenate([c, np.zeros(self.n) if u0 is None else np.asarray(u0, float).ravel()])
        return c

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is not None:
            return self._matrix
        n = self.n
        if self.mode == "stationary":
            block = sp.hstack([M.T for M in self.generators])
            self._matrix = sp.vstack([block, sp.csr_matrix(np.ones((1, self.n_vel * n)))]).tocsr()
            return self._matrix
        K, dt = self.K, self.dt
        eye = sp.identity(n, format="csr")
        same = sp.hstack([(M - eye / dt).T for M in self.generators])
        nxt = sp.hstack([eye / dt] * self.n_vel)
        e0 = sp.eye(K + 1, K, k=0)
        e1 = sp.eye(K + 1, K, k=-1)
        A = sp.kron(e0, same) + sp.kron(e1, nxt)
        if self.free_source:
            src = sp.vstack([eye, sp.csr_matrix((K * n, n))])
            A = sp.hstack([A, src])
            mass = sp.hstack([sp.csr_matrix((1, self.n_atoms)), sp.csr_matrix(np.ones((1, n)))])
            A = sp.vstack([A, mass])
        self._matrix = A.tocsr()
        return self._matrix

    # matrix-free products for large space-time systems
    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "stationary":
            return self.matrix() @ x
        n, K, dt = self.n, self.K, self.dt
        w = x[:self.n_atoms].reshape(K, self.n_vel, n)
        out = np.zeros((K + 1, n))
        for k in range(K):
            for j, M in enumerate(self.generators):
                out[k] += M.T @ w[k, j] - w[k, j] / dt
                out[k + 1] += w[k, j] / dt
        out = out.ravel()
        if self.free_source:
            nu0 = x[self.n_atoms:]
            out[:n] += nu0
            out = np.concatenate([out, [nu0.sum()]])
        return out

    def apply_T(self, y: np.ndarray) -> np.ndarray:
        if self.mode == "stationary":
            return self.matrix().T @ y
        n, K, dt = self.n, self.K, self.dt
        levels = y[:(K + 1) * n].reshape(K + 1, n)
        out = np.empty((K, self.n_vel, n))
        for k in range(K):
            for j, M in enumerate(self.generators):
                out[k, j] = M @ levels[k] - levels[k] / dt + levels[k + 1] / dt
        out = out.ravel()
        if self.free_source:
            out = np.concatenate([out, levels[0] + y[-1]])
        return out


def build_stationary_constraints(model: ModelSpec, grid: TorusGrid, vlat: VelocityLattice,
                                 eta: float = 0.0) -> HolonomyConstraintSystem:
    qs, gens, costs = atom_generators(model, grid, vlat, float(eta))
    return HolonomyConstraintSystem("stationary", model, Discretization(grid, vlat, eta), gens, costs)


def build_spacetime_constraints(model: ModelSpec, disc: Discretization, t: float,
                                nu1: DiscreteMeasure, nu0: DiscreteMeasure | str) -> HolonomyConstraintSystem:
    K = disc.steps(model, t)
    qs, gens, costs = atom_generators(model, disc.grid, disc.vlat, float(disc.eta))
    source = nu0 if isinstance(nu0, str) else nu0.weights
    if isinstance(source, str) and source != FREE:
        raise ConfigurationError(f"unknown source specification {source!r}")
    return HolonomyConstraintSystem("spacetime", model, disc, gens, costs, disc.time_step(model), K,
                                    nu1.weights, source)


@dataclass
class OccupationMeasure:
    mode: str
    grid: TorusGrid
    vlat: VelocityLattice
    weights: np.ndarray  # (n_vel, n) or (K, n_vel, n)
    dt: float | None = None
    nu0: np.ndarray | None = None
    nu1: np.ndarray | None = None

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def K(self) -> int:
        return self.weights.shape[0] if self.mode == "spacetime" else 0

    @property
    def horizon(self) -> float:
        return self.K * self.dt

    def action(self, costs: np.ndarray) -> float:
        w = self.weights if self.mode == "stationary" else self.weights.sum(axis=0)
        return float(np.sum(w * costs))


@dataclass
class MeasureLP:
    solution: LPSolution
    system: HolonomyConstraintSystem
    measure: OccupationMeasure | None = None
    nu0: np.ndarray | None = None

    @property
    def value(self) -> float:
        return self.solution.value

    @property
    def status(self) -> str:
        return self.solution.status

    @property
    def feasible(self) -> bool:
        return self.solution.status == OPTIMAL


def _wrap(sol: LPSolution, system: HolonomyConstraintSystem) -> MeasureLP:
    if not sol.optimal:
        return MeasureLP(sol, system)
    d = system.disc
    if system.mode == "stationary":
        w = sol.weights.reshape(system.n_vel, system.n)
        return MeasureLP(sol, system, OccupationMeasure("stationary", d.grid, d.vlat, w))
    w = sol.weights[:system.n_atoms].reshape(system.K, system.n_vel, system.n)
    nu0 = sol.weights[system.n_atoms:] if system.free_source else system.nu0
    occ = OccupationMeasure("spacetime", d.grid, d.vlat, w, system.dt, np.asarray(nu0), system.nu1)
    return MeasureLP(sol, system, occ, np.asarray(nu0))


def solve_mather_lp(model: ModelSpec, grid: TorusGrid, vlat: VelocityLattice, eta: float = 0.0) -> MeasureLP:
    system = build_stationary_constraints(model, grid, vlat, eta)
    sol = solve_equality_lp(system.cost(), system.matrix(), system.rhs())
    if sol.status == INFEASIBLE:
        raise RuntimeError("stationary holonomy system infeasible; constraint assembly is broken")
    return _wrap(sol, system)


def project_measure(mu: OccupationMeasure) -> DiscreteMeasure:
    if mu.mode != "stationary":
        raise ValueError("projection is defined for stationary measures")
    w = np.clip(mu.weights.sum(axis=0), 0.0, None)
    return DiscreteMeasure(mu.grid, w / w.sum())


def solve_ht_lp(system: HolonomyConstraintSystem, u0: np.ndarray | None = None) -> MeasureLP:
    """h_t for a fixed source, or the free-source problem with source cost u0; +inf when infeasible."""
    if system.mode != "spacetime":
        raise ValueError("h_t needs a space-time system")
    sol = solve_equality_lp(system.cost(u0), system.matrix(), system.rhs())
    return _wrap(sol, system)


def solve_free_source(system: HolonomyConstraintSystem, u0: np.ndarray | None = None) -> MeasureLP:
    """Exact free-source solve by backward induction on the lattice dynamic programme.

    The dual optimum is the lattice-scheme solution U started from u0; the primal optimum
    transports nu1 backward along the minimizing velocities.  Both objectives are returned
    together with matrix-free feasibility defects as an optimality certificate.
    """
    if system.mode != "spacetime" or not system.free_source:
        raise ValueError("backward induction applies to free-source space-time systems")
    grid, n, K, dt = system.disc.grid, system.n, system.K, system.dt
    qs = system.disc.vlat.velocities()
    nodal_diff = NodalModel(system.model, grid, system.disc.eta).diff
    back = [backward_matrix(grid, d) for d in range(grid.dim)]
    fwd = [forward_matrix(grid, d) for d in range(grid.dim)]
    U = np.zeros((K + 1, n))
    U[0] = 0.0 if u0 is None else np.asarray(u0, float).ravel()
    policy = np.zeros((K, n), dtype=int)
    for k in range(K):
        slack = np.stack([system.costs[j] - system.generators[j] @ U[k] for j in range(len(qs))])
        policy[k] = np.argmin(slack, axis=0)
        U[k + 1] = U[k] + dt * slack[policy[k], np.arange(n)]
    rho = np.zeros((K + 1, n))
    rho[K] = system.nu1
    w = np.zeros((K, len(qs), n))
    for k in range(K - 1, -1, -1):
        qn = qs[policy[k]]
        transport = sp.csr_matrix((n, n))
        for d in range(grid.dim):
            transport = transport + sp.diags(np.maximum(qn[:, d], 0)) @ back[d] + sp.diags(np.minimum(qn[:, d], 0)) @ fwd[d]
        step = sp.identity(n) - dt * (transport - nodal_diff)
        rho[k] = step.T @ rho[k + 1]
        w[k, policy[k], np.arange(n)] = dt * rho[k + 1]
    x = np.concatenate([w.ravel(), rho[0]])
    y = np.concatenate([U.ravel(), [0.0]])
    c, b = system.cost(u0), system.rhs()
    primal = max(float(np.max(np.abs(system.apply(x) - b))), float(np.max(-x, initial=0.0)))
    dual = max(float(np.max(system.apply_T(y) - c)), 0.0)
    sol = LPSolution(OPTIMAL, x, float(c @ x), y, float(b @ y), primal, dual, solver="backward-induction")
    return _wrap(sol, system)


def holonomy_defect(model: ModelSpec, disc: Discretization, gamma: OccupationMeasure) -> float:
    """Max residual of the space-time constraints for gamma with its own end marginals."""
    system = build_spacetime_constraints(model, disc, gamma.horizon, DiscreteMeasure(disc.grid, gamma.nu1),
                                         DiscreteMeasure(disc.grid, gamma.nu0))
    return float(np.max(np.abs(system.apply(gamma.weights.ravel()) - system.rhs())))


def embed_stationary(mu: OccupationMeasure, t: float, dt: float) -> OccupationMeasure:
    """Copy a stationary measure onto every time slice with slice mass dt."""
    if mu.mode != "stationary":
        raise ValueError("embed_stationary takes a stationary measure")
    K = int(round(t / dt))
    if K < 1 or abs(K * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigurationError(f"horizon t={t} is not a multiple of dt={dt}")
    nu = mu.weights.sum(axis=0)
    w = np.broadcast_to(dt * mu.weights, (K,) + mu.weights.shape).copy()
    return OccupationMeasure("spacetime", mu.grid, mu.vlat, w, dt, nu.copy(), nu.copy())


def concatenate(first: OccupationMeasure, second: OccupationMeasure, tol: float = 1e-8) -> OccupationMeasure:
    if first.mode != "spacetime" or second.mode != "spacetime":
        raise ValueError("concatenation joins space-time measures")
    if abs(first.dt - second.dt) > 1e-14:
        raise ValueError("time steps differ")
    gap = float(np.max(np.abs(first.nu1 - second.nu0)))
    if gap > tol:
        raise ValueError(f"terminal marginal of the first measure differs from the initial one of the second by {gap:.3e}")
    w = np.concatenate([first.weights, second.weights], axis=0)
    return OccupationMeasure("spacetime", first.grid, first.vlat, w, first.dt, first.nu0, second.nu1)


# ---------------------------------------------------------------------------
# potentials built from h_t


def ht_value(model: ModelSpec, disc: Discretization, nu0: DiscreteMeasure, nu1: DiscreteMeasure, t: float) -> MeasureLP:
    return solve_ht_lp(build_spacetime_constraints(model, disc, t, nu1, nu0))


@dataclass
class ManeResult:
    d: float
    t_star: float | None
    table: list[tuple[float, float]]  # (t, h_t)
    solves: list[MeasureLP] = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.d, self.t_star, self.table))


def mane_potential(model: ModelSpec, disc: Discretization, nu0: DiscreteMeasure, nu1: DiscreteMeasure,
                   horizons: Sequence[float]) -> ManeResult:
    if not len(horizons):
        raise ValueError("empty horizon list")
    table, solves = [], []
    for t in horizons:
        res = ht_value(model, disc, nu0, nu1, t)
        solves.append(res)
        table.append((float(t), res.value if res.feasible else math.inf))
    finite = [(v, t) for t, v in table if math.isfinite(v)]
    if not finite:
        return ManeResult(math.inf, None, table, solves)
    best = min(v for v, _ in finite)
    t_star = min(t for v, t in finite if v == best)
    return ManeResult(best, t_star, table, solves)


@dataclass
class BarrierEstimate:
    h: float
    sequence: list[tuple[float, float]]
    tail: list[float]


def peierls_barrier(model: ModelSpec, disc: Discretization, nu0: DiscreteMeasure, nu1: DiscreteMeasure,
                    schedule: Sequence[float] = (1, 2, 4, 8, 16, 32, 64), tail_window: int = 5,
                    table: list[tuple[float, float]] | None = None) -> BarrierEstimate:
    """Min of h_t over the last ``tail_window`` horizons of an increasing schedule."""
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be increasing")
    if table is None:
        table = mane_potential(model, disc, nu0, nu1, schedule).table
    tail = [v for _, v in table[-tail_window:]]
    return BarrierEstimate(min(tail), table, tail)


def aubry_test(model: ModelSpec, disc: Discretization, nu: DiscreteMeasure,
               schedule: Sequence[float] = (1, 2, 4, 8, 16, 32, 64), tol: float = 1e-6,
               tail_window: int = 5) -> bool:
    return abs(peierls_barrier(model, disc, nu, nu, schedule, tail_window).h) <= tol


@dataclass
class ConvexityReport:
    rows: list[tuple[float, float, float, float]]  # (lambda, h_mix, convex bound, slack)
    ok: bool


def convexity_check_ht(model: ModelSpec, disc: Discretization, nu_a: DiscreteMeasure, nu_b: DiscreteMeasure,
                       nu1: DiscreteMeasure, t: float, lambdas: Sequence[float], tol: float = 1e-7) -> ConvexityReport:
    ha = ht_value(model, disc, nu_a, nu1, t)
    hb = ht_value(model, disc, nu_b, nu1, t)
    if not (ha.feasible and hb.feasible):
        raise ValueError("both end values must be finite")
    rows = []
    for lam in lambdas:
        mix = ht_value(model, disc, nu_a.mix(nu_b, lam), nu1, t)
        bound = lam * ha.value + (1 - lam) * hb.value
        rows.append((float(lam), mix.value, bound, bound - mix.value))
    return ConvexityReport(rows, all(r[3] >= -tol for r in rows))
