"""Finite-difference stencils on the periodic grid, as array kernels and sparse matrices.

Both forms index nodes in C order over ``grid.shape``; tests pin the two forms
against each other so the scheme, its adjoint and the LP share one discretization.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .model import ConfigurationError, ModelSpec, TorusGrid, VelocityLattice


def backward_diff(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """(u_i - u_{i-e_d})/h for each axis d; input flat, output (dim, size)."""
    v = u.reshape(grid.shape)
    return np.stack([(v - np.roll(v, 1, axis=d)).ravel() for d in range(grid.dim)]) / grid.h


def forward_diff(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    v = u.reshape(grid.shape)
    return np.stack([(np.roll(v, -1, axis=d) - v).ravel() for d in range(grid.dim)]) / grid.h


def shift_matrix(grid: TorusGrid, axis: int, offset: int) -> sp.csr_matrix:
    """(S u)_i = u_{i + offset e_axis}."""
    idx = np.arange(grid.size).reshape(grid.shape)
    target = np.roll(idx, -offset, axis=axis).ravel()
    return sp.csr_matrix((np.ones(grid.size), (np.arange(grid.size), target)), shape=(grid.size, grid.size))


def backward_matrix(grid: TorusGrid, axis: int) -> sp.csr_matrix:
    return ((sp.identity(grid.size, format="csr") - shift_matrix(grid, axis, -1)) / grid.h).tocsr()


def forward_matrix(grid: TorusGrid, axis: int) -> sp.csr_matrix:
    return ((shift_matrix(grid, axis, 1) - sp.identity(grid.size, format="csr")) / grid.h).tocsr()


def centered_matrix(grid: TorusGrid, axis: int) -> sp.csr_matrix:
    return ((shift_matrix(grid, axis, 1) - shift_matrix(grid, axis, -1)) / (2 * grid.h)).tocsr()


def second_matrix(grid: TorusGrid, axis: int) -> sp.csr_matrix:
    eye = sp.identity(grid.size, format="csr")
    return ((shift_matrix(grid, axis, 1) - 2 * eye + shift_matrix(grid, axis, -1)) / grid.h**2).tocsr()


def laplacian_matrix(grid: TorusGrid) -> sp.csr_matrix:
    return sum(second_matrix(grid, d) for d in range(grid.dim)).tocsr()


def diffusion_matrix(model: ModelSpec, grid: TorusGrid, extra: float = 0.0) -> sp.csr_matrix:
    """Monotone discretization of tr((A(x) + extra I) D^2 u), or (a(x)+extra) Lap u."""
    x = grid.points().reshape(-1, grid.dim)
    if not model.diffusion.is_matrix:
        coef = model.diffusion.scalar(x) + extra
        if np.any(coef < -1e-14):
            raise ConfigurationError("diffusion coefficient is negative somewhere")
        return (sp.diags(coef) @ laplacian_matrix(grid)).tocsr()
    if grid.dim != 2:
        raise ConfigurationError("matrix diffusion is supported in two dimensions only")
    A = model.diffusion.matrix(x)
    a11, a22, a12 = A[:, 0, 0] + extra, A[:, 1, 1] + extra, A[:, 0, 1]
    if not np.allclose(A[:, 0, 1], A[:, 1, 0]):
        raise ConfigurationError("diffusion matrix is not symmetric")
    bad = np.where((a11 < np.abs(a12) - 1e-14) | (a22 < np.abs(a12) - 1e-14))[0]
    if len(bad):
        node = np.unravel_index(bad[0], grid.shape)
        raise ConfigurationError(f"diffusion matrix not diagonally dominant at node {tuple(int(i) for i in node)}")
    h2 = grid.h**2
    pos, neg = np.maximum(a12, 0.0), np.maximum(-a12, 0.0)
    S = lambda ox, oy: shift_matrix(grid, 0, ox) @ shift_matrix(grid, 1, oy) if ox and oy else (
        shift_matrix(grid, 0, ox) if ox else shift_matrix(grid, 1, oy))
    eye = sp.identity(grid.size, format="csr")
    out = sp.diags(a11 - pos - neg) @ (S(1, 0) + S(-1, 0)) / h2
    out = out + sp.diags(a22 - pos - neg) @ (S(0, 1) + S(0, -1)) / h2
    out = out + sp.diags(pos) @ (S(1, 1) + S(-1, -1)) / h2
    out = out + sp.diags(neg) @ (S(1, -1) + S(-1, 1)) / h2
    out = out - sp.diags(2 * (a11 + a22) - 2 * (pos + neg)) @ eye / h2
    return out.tocsr()


def max_diffusion(model: ModelSpec, grid: TorusGrid) -> float:
    return max(model.diffusion.max_eigenvalue(grid), 0.0)


class NodalModel:
    """Model fields cached at the grid nodes, plus the diffusion matrix."""

    def __init__(self, model: ModelSpec, grid: TorusGrid, eps: float = 0.0):
        self.model = model
        self.grid = grid
        self.eps = float(eps)
        self.x = grid.points().reshape(-1, grid.dim)
        self.V = model.potential.value(self.x)
        self.b = model.drift_field(self.x)
        self.diff = diffusion_matrix(model, grid, eps)
        self.a_max = max_diffusion(model, grid) + self.eps

    def hamiltonian(self, p: np.ndarray) -> np.ndarray:
        """p has shape (dim, size)."""
        m = self.model.m
        r = np.sqrt(np.sum(p**2, axis=0))
        return r**m / m + np.sum(self.b.T * p, axis=0) - self.V + self.model.c_shift

    def grad_p(self, p: np.ndarray) -> np.ndarray:
        m = self.model.m
        r = np.sqrt(np.sum(p**2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, r ** (m - 2.0), 0.0)
        return s * p + self.b.T

    def lagrangian(self, q: np.ndarray) -> np.ndarray:
        """q has shape (dim,) or (dim, size); result per node."""
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        mc = self.model.m_conj
        r = np.sqrt(np.sum((q - self.b.T) ** 2, axis=0))
        return r**mc / mc + self.V - self.model.c_shift


def upwind_velocity_matrix(grid: TorusGrid, q: np.ndarray) -> sp.csr_matrix:
    """q . D^up, with the backward difference where q_d >= 0 and forward where q_d < 0."""
    out = sp.csr_matrix((grid.size, grid.size))
    for d in range(grid.dim):
        if q[d] >= 0:
            out = out + q[d] * backward_matrix(grid, d)
        else:
            out = out + q[d] * forward_matrix(grid, d)
    return out.tocsr()


def lattice_time_step(nodal: NodalModel, vlat: VelocityLattice, cfl: float) -> float:
    dim, h = nodal.grid.dim, nodal.grid.h
    return cfl / (2 * dim * nodal.a_max / h**2 + dim * vlat.q_max / h)
