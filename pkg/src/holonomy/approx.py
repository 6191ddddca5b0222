"""Space-time mollification, sup/inf convolutions and the regularized-subsolution audits.

Residuals of regularized fields are measured with the scheme's own discrete
operator (forward time difference, the monotone diffusion matrix and the
Lax-Friedrichs numerical Hamiltonian with fixed dissipation).  The stored
trajectory satisfies that operator to rounding, so whatever residual remains
after regularization is produced by the regularization itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .model import ConfigurationError, GridFunction, ModelSpec, TorusGrid, hamiltonian_grad_x
from .pde import SolveConfig, Stepper, Trajectory


def bump(r: np.ndarray) -> np.ndarray:
    """exp(-1/(1-r^2)) on |r| < 1, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierSpec:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")

    def space_kernel(self, grid: TorusGrid) -> np.ndarray:
        """Periodic kernel on the grid, symmetric, unit mass."""
        if self.alpha < 2 * grid.h - 1e-14:
            raise ConfigurationError(f"alpha={self.alpha} is below 2h={2 * grid.h}; kernel not resolved")
        k = int(math.floor(self.alpha / grid.h))
        offs = np.arange(-k, k + 1)
        grids = np.meshgrid(*([offs] * grid.dim), indexing="ij")
        radius = np.sqrt(sum(g.astype(float) ** 2 for g in grids)) * grid.h / self.alpha
        weights = bump(radius)
        weights /= weights.sum()
        ker = np.zeros(grid.shape)
        idx = tuple(np.mod(g, grid.n) for g in grids)
        np.add.at(ker, idx, weights)
        return ker

    def time_kernel(self, dt: float) -> np.ndarray:
        """Weights on forward lags 0, dt, ..., 2 alpha: the bump centred at lag alpha, unit mass.

        Averaging w over t + lag realizes the shifted mollification w^alpha(x, t + alpha).
        """
        ks = int(round(self.alpha / dt))
        if ks < 1:
            raise ConfigurationError("time step coarser than alpha")
        w = bump((np.arange(2 * ks + 1) - ks) / ks)
        return w / w.sum()


def _space_convolve(values: np.ndarray, ker: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """values (..., *grid.shape) convolved periodically with a symmetric kernel."""
    axes = tuple(range(values.ndim - grid.dim, values.ndim))
    f = np.fft.fftn(values, axes=axes) * np.fft.fftn(ker)
    return np.real(np.fft.ifftn(f, axes=axes))


def mollify_spacetime(w: Trajectory | GridFunction, spec: MollifierSpec):
    """Space mollification, plus the forward time average over [t, t + 2 alpha] for trajectories."""
    if isinstance(w, GridFunction):
        ker = spec.space_kernel(w.grid)
        return GridFunction(w.grid, _space_convolve(w.values, ker, w.grid))
    grid = w.grid
    dts = np.diff(w.times)
    dt = dts[0]
    if np.max(np.abs(dts[:-1] - dt)) > 1e-12 * max(dt, 1e-300):
        raise ConfigurationError("time mollification needs a uniformly stepped trajectory")
    W = np.stack([f.values for f in w.fields])
    if abs(dts[-1] - dt) > 1e-12 * dt:
        W = W[:-1]  # clipped final step
    Ws = _space_convolve(W, spec.space_kernel(grid), grid)
    rho = spec.time_kernel(dt)
    if len(rho) > len(Ws):
        raise ConfigurationError("trajectory shorter than alpha")
    shape = (len(rho),) + (1,) * grid.dim
    Wm = fftconvolve(Ws, rho.reshape(shape), mode="valid", axes=0)  # Wm[k] averages levels k..k+2ks
    times = w.times[:len(Wm)]
    return Trajectory(w.model, grid, times, [GridFunction(grid, v) for v in Wm], w.eps_viscosity,
                      w.scheme, w.cfg)


def scheme_residual_field(stepper: Stepper, W: np.ndarray, dt: float) -> np.ndarray:
    """(W^{k+1} - W^k)/dt - [tr((A+eta) D^2) W^k - Hhat(W^k)] for k = 0..len(W)-2, flattened per level."""
    flat = W.reshape(len(W), -1)
    ops = np.stack([stepper.operator(v) for v in flat[:-1]])
    return (flat[1:] - flat[:-1]) / dt - ops


def _uniform_levels(traj: Trajectory) -> tuple[np.ndarray, float]:
    dts = np.diff(traj.times)
    dt = dts[0]
    W = np.stack([f.values for f in traj.fields])
    if abs(dts[-1] - dt) > 1e-12 * dt:
        W = W[:-1]
    if np.max(np.abs(np.diff(traj.times[:len(W)]) - dt)) > 1e-12 * dt:
        raise ConfigurationError("residual scan needs a uniformly stepped trajectory")
    return W, dt


def _scheme_stepper(model: ModelSpec, traj: Trajectory, eta: float | None = None) -> Stepper:
    cfg = traj.cfg
    if cfg is None or cfg.lf_dissipation == "auto" or not cfg.store_every_step:
        raise ConfigurationError("scans need every step of a run with fixed lf_dissipation")
    if eta is not None:
        cfg = replace(cfg, eps_viscosity=eta)
    return Stepper(model, traj.grid, cfg)


@dataclass
class ResidualScan:
    alphas: list[float]
    residuals: list[float]
    minima: list[float]
    floor: float
    exponent: float | None
    undefined: bool
    fit_range: list[float] = field(default_factory=list)


def subsolution_residual_scan(model: ModelSpec, w: Trajectory, alphas: Sequence[float],
                              floor_factor: float = 10.0) -> ResidualScan:
    """Max residual of the mollified trajectory for each alpha and the log-log slope of r(alpha)."""
    stepper = _scheme_stepper(model, w)
    W, dt = _uniform_levels(w)
    floor = float(np.max(np.abs(scheme_residual_field(stepper, W, dt))))
    res, mins = [], []
    for a in alphas:
        moll = mollify_spacetime(w, MollifierSpec(a))
        Wm = np.stack([f.values for f in moll.fields])
        r = scheme_residual_field(stepper, Wm, dt)
        res.append(float(r.max()))
        mins.append(float(r.min()))
    keep = [i for i, r in enumerate(res) if r > floor_factor * floor]
    if len(keep) < 2:
        return ResidualScan(list(alphas), res, mins, floor, None, True, [])
    la = np.log([alphas[i] for i in keep])
    lr = np.log([res[i] for i in keep])
    slope = float(np.polyfit(la, lr, 1)[0])
    return ResidualScan(list(alphas), res, mins, floor, slope, False, [alphas[i] for i in keep])


# ---------------------------------------------------------------------------
# sup / inf convolutions


@dataclass(frozen=True)
class ConvolutionParams:
    eps: float
    delta: float
    eta: float

    def __post_init__(self):
        if min(self.eps, self.delta, self.eta) <= 0:
            raise ConfigurationError("eps, delta and eta must be positive")


def discrete_lipschitz(values: np.ndarray, grid: TorusGrid) -> float:
    """Largest one-sided difference quotient along the axes, scaled by sqrt(dim)."""
    v = np.asarray(values).reshape(grid.shape)
    worst = max(float(np.max(np.abs(np.roll(v, -1, axis=d) - v))) for d in range(grid.dim)) / grid.h
    return worst * math.sqrt(grid.dim)


def _ball_offsets(grid: TorusGrid, radius: float) -> tuple[np.ndarray, np.ndarray]:
    k = min(int(math.floor(radius / grid.h)), grid.n // 2)
    offs = np.arange(-k, k + 1)
    grids = np.meshgrid(*([offs] * grid.dim), indexing="ij")
    off = np.stack([g.ravel() for g in grids], axis=-1)
    dist2 = np.sum((off * grid.h) ** 2, axis=-1)
    keep = dist2 <= radius**2 + 1e-14
    return off[keep], dist2[keep]


def _convolve_extremal(values: np.ndarray, grid: TorusGrid, eps: float, sign: int, lip: float | None) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(grid.shape)
    L = discrete_lipschitz(v, grid) if lip is None else lip
    radius = max(2 * L * eps, grid.h)
    offs, dist2 = _ball_offsets(grid, radius)
    out = np.full(grid.shape, -np.inf if sign > 0 else np.inf)
    for o, d2 in zip(offs, dist2):
        shifted = np.roll(v, tuple(-o), axis=tuple(range(grid.dim)))  # v(x + o h)
        cand = shifted - sign * d2 / (2 * eps)
        out = np.maximum(out, cand) if sign > 0 else np.minimum(out, cand)
    return out


def sup_convolution(w: GridFunction, eps: float, lip: float | None = None) -> GridFunction:
    """max over |x - y| <= 2 L eps of w(y) - |x - y|^2 / (2 eps), on grid nodes."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    return GridFunction(w.grid, _convolve_extremal(w.values, w.grid, eps, +1, lip))


def inf_convolution(w: GridFunction, delta: float, lip: float | None = None) -> GridFunction:
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    return GridFunction(w.grid, _convolve_extremal(w.values, w.grid, delta, -1, lip))


@dataclass
class HessianAudit:
    lower: float  # most negative normalized second difference
    upper: float
    lower_bound: float
    upper_bound: float
    slack: float
    passed: bool
    worst_node: tuple


def second_differences(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Normalized second differences along the axes and, in 2D, both diagonals."""
    v = np.asarray(values).reshape(grid.shape)
    axes = tuple(range(grid.dim))
    dirs = [tuple(int(i == d) for i in range(grid.dim)) for d in range(grid.dim)]
    if grid.dim == 2:
        dirs += [(1, 1), (1, -1)]
    out = []
    for e in dirs:
        step2 = grid.h**2 * sum(c * c for c in e)
        plus = np.roll(v, tuple(-c for c in e), axis=axes)
        minus = np.roll(v, e, axis=axes)
        out.append((plus - 2 * v + minus) / step2)
    return np.stack(out)


def _axis_extremal(values: np.ndarray, axis: int, src: np.ndarray, dst: np.ndarray, scale: float,
                   sign: int) -> np.ndarray:
    """Along one axis: max (sign=+1) or min (sign=-1) over src of values - sign d(dst, src)^2 / (2 scale).

    d is the periodic distance on the unit circle.
    """
    gap = np.abs(dst[:, None] - src[None, :])
    gap = np.minimum(gap, 1.0 - gap)
    pen = gap**2 / (2 * scale)
    moved = np.moveaxis(values, axis, -1)[..., None, :]
    cand = moved - sign * pen
    red = cand.max(axis=-1) if sign > 0 else cand.min(axis=-1)
    return np.moveaxis(red, -1, axis)


def _refined_double(v: np.ndarray, grid: TorusGrid, eps: float, delta: float, refine: int) -> np.ndarray:
    """(v^{eps+delta})_delta with the inner minimizer searched on the lattice of spacing h/refine.

    The sup-convolution is evaluated exactly at every refined point (a max over grid nodes),
    so only the position of the minimizer is discretized.  The quadratic penalty splits
    over axes, so both extremal problems are done one axis at a time over the whole torus.
    """
    v = np.asarray(v, dtype=float).reshape(grid.shape)
    nodes = np.arange(grid.n) * grid.h
    fine = np.arange(grid.n * refine) * grid.h / refine
    outer = v
    for d in range(grid.dim):
        outer = _axis_extremal(outer, d, nodes, fine, eps + delta, +1)
    out = outer
    for d in range(grid.dim):
        out = _axis_extremal(out, d, fine, nodes, delta, -1)
    return out


def default_refinement(grid: TorusGrid) -> int:
    """Minimizer lattice factor r with 1/r^2 = O(h), so grid-jump kinks stay O(h / delta)."""
    return max(1, int(math.ceil(math.sqrt(grid.n / 2))))


def double_convolution(w: GridFunction, eps: float, delta: float, slack: float | None = None,
                       raise_on_failure: bool = True, refine: int | None = None) -> tuple[GridFunction, HessianAudit]:
    """(w^{eps+delta})_delta with an audit of -1/eps <= D^2 <= 1/delta on every node and direction.

    The default slack is 2 h (1/eps + 1/delta): the minimizer lattice has spacing h/r with
    r^2 >= n/2, so jumps of the discrete minimizer move second differences by at most
    O(h/delta).
    """
    if eps <= 0 or delta <= 0:
        raise ConfigurationError("eps and delta must be positive")
    grid = w.grid
    refine = default_refinement(grid) if refine is None else int(refine)
    result = GridFunction(grid, _refined_double(w.values, grid, eps, delta, refine))
    d2 = second_differences(result.values, grid)
    if slack is None:
        slack = 2 * grid.h * (1.0 / eps + 1.0 / delta)
    lo, hi = float(d2.min()), float(d2.max())
    low_bad = lo < -1.0 / eps - slack
    ok = not low_bad and hi <= 1.0 / delta + slack
    worst = np.unravel_index(int(np.argmin(d2) if low_bad else np.argmax(d2)), d2.shape)
    audit = HessianAudit(lo, hi, -1.0 / eps, 1.0 / delta, slack, ok, tuple(int(i) for i in worst[1:]))
    if not ok and raise_on_failure:
        raise AssertionError(f"Hessian bounds violated at node {audit.worst_node}: [{lo:.6g}, {hi:.6g}]")
    return result, audit


# ---------------------------------------------------------------------------
# explicit budgets


def delta0(eps: float, eta: float, L: float, Lambda: float, Cbar: float, n: int) -> float:
    """eps eta / ((n-1)(Lambda+eta) + (L + Cbar) eps)."""
    if eps <= 0 or eta <= 0:
        raise ConfigurationError("eps and eta must be positive")
    return eps * eta / ((n - 1) * (Lambda + eta) + (L + Cbar) * eps)


def kappa(alpha: float, eta: float, delta: float, eps: float, C: float, n: int, omega_eps: float) -> float:
    """omega(eps) + n eta / eps + C max(1/eps, 1/delta) alpha."""
    if eps <= 0 or delta <= 0:
        raise ConfigurationError("eps and delta must be positive")
    return omega_eps + n * eta / eps + C * max(1.0 / eps, 1.0 / delta) * alpha


def hamiltonian_cap(model: ModelSpec, grid: TorusGrid, radius: float, samples: int = 21) -> tuple[float, float]:
    """max H(x,p) and max |D_x H(x,p)| over grid nodes and |p| <= radius."""
    from .model import eval_hamiltonian

    x = grid.points().reshape(-1, grid.dim)
    r = np.linspace(-radius, radius, samples)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*([r] * grid.dim), indexing="ij")], axis=-1)
    mesh = mesh[np.sqrt(np.sum(mesh**2, axis=-1)) <= radius + 1e-12]
    X = np.repeat(x, len(mesh), axis=0)
    P = np.tile(mesh, (len(x), 1))
    return float(np.max(eval_hamiltonian(model, X, P))), float(np.max(np.linalg.norm(hamiltonian_grad_x(model, X, P), axis=-1)))


def diffusion_lipschitz(model: ModelSpec, grid: TorusGrid) -> float:
    """Largest entrywise difference quotient of A(x) between neighbouring nodes."""
    x = grid.points()
    A = model.diffusion.matrix(x.reshape(-1, grid.dim)).reshape(grid.shape + (grid.dim, grid.dim))
    worst = 0.0
    for d in range(grid.dim):
        diff = np.abs(np.roll(A, -1, axis=d) - A) / grid.h
        worst = max(worst, float(diff.max()))
    return worst


@dataclass
class AppendixBReport:
    max_residual: float
    kappa: float
    omega_eps: float
    delta: float
    delta0: float
    C: float
    discretization_slack: float
    passed: bool
    details: dict = field(default_factory=dict)


def _regularize_levels(W: np.ndarray, grid: TorusGrid, eps: float, delta: float, refine: int) -> np.ndarray:
    return np.stack([_refined_double(v, grid, eps, delta, refine) for v in W])


def _separable_sup(v: np.ndarray, grid: TorusGrid, eps: float) -> np.ndarray:
    nodes = np.arange(grid.n) * grid.h
    out = np.asarray(v, dtype=float).reshape(grid.shape)
    for d in range(grid.dim):
        out = _axis_extremal(out, d, nodes, nodes, eps, +1)
    return out


def appendix_b_subsolution_audit(model: ModelSpec, w: Trajectory, eps: float, eta: float, alpha: float,
                                 delta: float | None = None, delta_factor: float = 0.9,
                                 slack_constant: float | None = None, refine: int | None = None) -> AppendixBReport:
    """Residual of the mollified double convolution against the kappa budget.

    omega(eps) is measured as the largest residual of the sup-convolution w^eps under the
    same operator without eta.  C collects dim * Lip(A) and min(eps, delta) * max|D_x H| on
    |p| <= 2L.  The O(h) allowance is slack_constant * h * max|D^2 w~| with default constant
    1 + dim * lf / 2, the size of the Lax-Friedrichs numerical viscosity.
    """
    grid, n = w.grid, w.grid.dim
    W, dt = _uniform_levels(w)
    lip = max(discrete_lipschitz(v, grid) for v in W)
    ut = float(np.max(np.abs(np.diff(W, axis=0)))) / dt
    L = ut + lip
    Lambda = max(model.diffusion.max_eigenvalue(grid), 0.0)
    Cbar, dxH = hamiltonian_cap(model, grid, 2 * L)
    d0 = delta0(eps, eta, L, Lambda, Cbar, n)
    if delta is None:
        delta = delta_factor * d0
    refine = default_refinement(grid) if refine is None else int(refine)

    base = _scheme_stepper(model, w, eta=0.0)
    sup_levels = np.stack([_separable_sup(v, grid, eps) for v in W])
    omega = max(float(np.max(scheme_residual_field(base, sup_levels, dt))), 0.0)

    reg = _regularize_levels(W, grid, eps, delta, refine)
    spec = MollifierSpec(alpha)
    rho = spec.time_kernel(dt)
    if len(rho) > len(reg):
        raise ConfigurationError("trajectory shorter than 2 alpha")
    Ws = _space_convolve(reg, spec.space_kernel(grid), grid)
    shape = (len(rho),) + (1,) * grid.dim
    Wm = fftconvolve(Ws, rho.reshape(shape), mode="valid", axes=0)
    viscous = _scheme_stepper(model, w, eta=eta)
    r = scheme_residual_field(viscous, Wm, dt)
    C = n * diffusion_lipschitz(model, grid) + dxH * min(eps, delta)
    budget = kappa(alpha, eta, delta, eps, C, n, omega)
    if slack_constant is None:
        slack_constant = 1.0 + n * float(w.cfg.lf_dissipation) / 2
    curv = max(float(np.max(np.abs(second_differences(v, grid)))) for v in Wm)
    slack = slack_constant * grid.h * curv
    worst = float(r.max())
    return AppendixBReport(worst, float(budget), omega, float(delta), float(d0), float(C), float(slack),
                           bool(worst <= budget + slack),
                           {"L": L, "Lambda": Lambda, "Cbar": Cbar, "levels": len(Wm), "curvature": curv,
                            "refine": refine})
