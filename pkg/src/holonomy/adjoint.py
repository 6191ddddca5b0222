"""Backward Fokker-Planck sweep and occupation measures from the regularized HJB solve.

The forward LLF step, with its dissipation frozen, linearizes to
    u^{k+1} = (I + dt_k G_k) u^k,   G_k = (A + eps) D^2 - qbar . D^c + sum_d (alpha_d h / 2) D^2_d,
where qbar = D_pH at the centered gradient.  The density is propagated by the
exact transpose, rho^k = (I + dt_k G_k)^T rho^{k+1}, with rho = sigma h^dim.
Under the CFL condition the matrix has nonnegative entries and unit row sums,
so positivity and mass are preserved to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .measures import DiscreteMeasure
from .model import ConfigurationError, GridFunction, ModelSpec
from .pde import Trajectory, llf_parts
from .stencils import NodalModel, centered_matrix, second_matrix


@dataclass
class AdjointRun:
    sigma: list[GridFunction]  # density at each retained time level
    times: np.ndarray
    nu0: DiscreteMeasure
    nu1: DiscreteMeasure
    eps: float
    operators: list[sp.csr_matrix]  # G_k, one per forward step
    mass_drift: float
    min_density: float


@dataclass
class AdjointOccupation:
    weights: np.ndarray  # (K, n): rho^{k+1} dt_k
    q_upwind: np.ndarray  # (K, dim, n): D_pH at the upwind one-sided gradient
    q_scheme: np.ndarray  # (K, dim, n): D_pH at the centered gradient used by G_k
    dts: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


def _check_dense(u_traj: Trajectory, t0: float, t1: float) -> tuple[int, int]:
    if u_traj.cfg is None or not u_traj.cfg.store_every_step:
        raise ConfigurationError("the adjoint sweep needs every forward step (store_every_step=True)")
    if u_traj.scheme != "llf":
        raise ConfigurationError("the adjoint sweep linearizes the llf scheme")
    i0 = int(np.argmin(np.abs(u_traj.times - t0)))
    i1 = int(np.argmin(np.abs(u_traj.times - t1)))
    if abs(u_traj.times[i0] - t0) > 1e-9 or abs(u_traj.times[i1] - t1) > 1e-9 or i1 <= i0:
        raise ValueError("t0 and t1 must be retained times with t0 < t1")
    return i0, i1


def linearized_operator(nodal: NodalModel, u: np.ndarray, alpha_fixed: float | None = None):
    """G = (A+eps) D^2 - qbar . D^c + sum_d alpha_d h/2 D^2_d, and the pieces used to build it."""
    grid = nodal.grid
    parts = llf_parts(nodal, u, alpha_fixed)
    qbar = nodal.grad_p(parts.p_center)
    G = nodal.diff.copy()
    for d in range(grid.dim):
        G = G - sp.diags(qbar[d]) @ centered_matrix(grid, d)
        G = G + sp.diags(0.5 * grid.h * parts.alpha[d]) @ second_matrix(grid, d)
    # upwind gradient: p- where the flux derivative at the centered gradient is >= 0, else p+
    p_up = np.where(qbar >= 0, parts.p_minus, parts.p_plus)
    return G.tocsr(), qbar, nodal.grad_p(p_up)


def solve_adjoint_fp(model: ModelSpec, u_traj: Trajectory, nu1: DiscreteMeasure,
                     t0: float | None = None, t1: float | None = None) -> AdjointRun:
    eps = u_traj.eps_viscosity
    if eps <= 0:
        raise ConfigurationError("the adjoint construction needs eps > 0")
    t0 = float(u_traj.times[0]) if t0 is None else t0
    t1 = float(u_traj.times[-1]) if t1 is None else t1
    i0, i1 = _check_dense(u_traj, t0, t1)
    grid = u_traj.grid
    nodal = NodalModel(model, grid, eps)
    lf = u_traj.cfg.lf_dissipation
    alpha_fixed = None if lf == "auto" else float(lf)
    ops = []
    for k in range(i0, i1):
        G, _, _ = linearized_operator(nodal, u_traj.values(k), alpha_fixed)
        ops.append(G)
    rho = nu1.weights.copy()
    rhos = [rho]
    drift, min_rho = 0.0, float(rho.min())
    for idx in range(len(ops) - 1, -1, -1):
        dt = u_traj.times[i0 + idx + 1] - u_traj.times[i0 + idx]
        P = sp.identity(grid.size) + dt * ops[idx]
        if P.min() < -1e-12:
            raise ConfigurationError("step violates the Fokker-Planck positivity condition")
        new = P.T @ rho
        drift = max(drift, abs(new.sum() - rho.sum()))
        rho = new
        min_rho = min(min_rho, float(rho.min()))
        rhos.append(rho)
    rhos.reverse()
    vol = grid.cell_volume
    sigma = [GridFunction(grid, (r / vol).reshape(grid.shape)) for r in rhos]
    nu0 = DiscreteMeasure(grid, np.clip(rhos[0], 0, None) / np.clip(rhos[0], 0, None).sum())
    return AdjointRun(sigma, u_traj.times[i0:i1 + 1].copy(), nu0, nu1, eps, ops, drift, min_rho)


def build_gamma(model: ModelSpec, u_traj: Trajectory, run: AdjointRun) -> AdjointOccupation:
    """gamma weight of (node, step k) is sigma h^dim at the later level times dt_k."""
    grid = u_traj.grid
    nodal = NodalModel(model, grid, run.eps)
    lf = u_traj.cfg.lf_dissipation
    alpha_fixed = None if lf == "auto" else float(lf)
    i0 = int(np.argmin(np.abs(u_traj.times - run.times[0])))
    dts = np.diff(run.times)
    K = len(dts)
    w = np.empty((K, grid.size))
    qs_up = np.empty((K, grid.dim, grid.size))
    qs_c = np.empty((K, grid.dim, grid.size))
    for k in range(K):
        _, qbar, q_up = linearized_operator(nodal, u_traj.values(i0 + k), alpha_fixed)
        w[k] = run.sigma[k + 1].values.ravel() * grid.cell_volume * dts[k]
        qs_up[k], qs_c[k] = q_up, qbar
    return AdjointOccupation(w, qs_up, qs_c, dts)


def holonomy_residuals(occ: AdjointOccupation, operators: list, nu0: np.ndarray, nu1: np.ndarray) -> np.ndarray:
    """Residual of sum_k <w_k, (phi^{k+1}-phi^k)/dt_k - G_k phi^k> = <phi^K,nu1> - <phi^0,nu0> on every nodal hat."""
    K, n = occ.weights.shape
    res = np.zeros((K + 1, n))
    for k in range(K):
        wk, dt = occ.weights[k], occ.dts[k]
        res[k + 1] += wk / dt
        res[k] -= wk / dt + operators[k].T @ wk
    res[K] -= nu1
    res[0] += nu0
    return res


def naive_operators(model: ModelSpec, occ: AdjointOccupation, grid, eps: float) -> list[sp.csr_matrix]:
    """(a+eps) D^2 - q . D^c with the stored upwind drift: the textbook continuum test operator."""
    diff = NodalModel(model, grid, eps).diff
    D = [centered_matrix(grid, d) for d in range(grid.dim)]
    ops = []
    for k in range(occ.weights.shape[0]):
        G = diff.copy()
        for d in range(grid.dim):
            G = G - sp.diags(occ.q_upwind[k, d]) @ D[d]
        ops.append(G.tocsr())
    return ops


def verify_holonomy(model: ModelSpec, occ: AdjointOccupation, nu0: DiscreteMeasure, nu1: DiscreteMeasure,
                    eps: float, operators: str | list = "scheme", run: AdjointRun | None = None) -> float:
    """Max defect of the space-time holonomy identity over the full nodal basis."""
    if nu0.grid != nu1.grid:
        raise ValueError("grid mismatch")
    grid = nu0.grid
    if occ.weights.shape[1] != grid.size:
        raise ValueError("grid mismatch")
    if isinstance(operators, str):
        if operators == "scheme":
            if run is None:
                raise ValueError("scheme operators come from the adjoint run")
            ops = run.operators
        elif operators == "naive":
            ops = naive_operators(model, occ, grid, eps)
        else:
            raise ValueError(f"unknown operator choice {operators!r}")
    else:
        ops = operators
    return float(np.max(np.abs(holonomy_residuals(occ, ops, nu0.weights, nu1.weights))))


def verify_value_identity(model: ModelSpec, occ: AdjointOccupation, run: AdjointRun, u_traj: Trajectory,
                          drift: str = "upwind") -> float:
    """|sum L(x, q) gamma - (<u(t1), nu1> - <u(t0), nu0>)|."""
    grid = u_traj.grid
    nodal = NodalModel(model, grid, run.eps)
    q = occ.q_upwind if drift == "upwind" else occ.q_scheme
    action = sum(float(np.dot(occ.weights[k], nodal.lagrangian(q[k]))) for k in range(len(occ.dts)))
    i0 = int(np.argmin(np.abs(u_traj.times - run.times[0])))
    i1 = int(np.argmin(np.abs(u_traj.times - run.times[-1])))
    rho0 = run.sigma[0].values.ravel() * grid.cell_volume
    rhs = run.nu1.pair(u_traj.values(i1)) - float(np.dot(rho0, u_traj.values(i0)))
    return abs(action - rhs)
