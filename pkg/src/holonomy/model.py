"""Torus geometry, Hamiltonian/Lagrangian pairs and diffusion fields.

Positions are stored as integer node indices on a uniform periodic grid of
side one; coordinates are produced only when a closed-form field has to be
evaluated.  All field evaluations are vectorised over leading axes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for malformed or unsupported model descriptions."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on the unit torus in one or two dimensions."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 4:
            raise ConfigurationError(f"need at least 4 nodes per dimension, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def points(self) -> np.ndarray:
        """Node coordinates with shape ``shape + (dim,)``."""
        axes = [np.arange(self.n) * self.h] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def wrap(self, index) -> np.ndarray:
        return np.mod(index, self.n)

    def node_of(self, x: Sequence[float]) -> tuple[int, ...]:
        """Nearest node to a coordinate, with periodic wraparound."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return tuple(int(v) for v in np.mod(np.rint(x * self.n), self.n).astype(int))

    def periodic_offset(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Minimal-image displacement x - y on the torus."""
        d = np.asarray(x) - np.asarray(y)
        return d - np.rint(d)


@dataclass(frozen=True)
class GridFunction:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", v)

    def integrate(self, weights: np.ndarray) -> float:
        """Pairing with a probability vector given on the same nodes."""
        return float(np.sum(self.values * np.asarray(weights).reshape(self.grid.shape)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class VelocityLattice:
    """All q with |q|_inf <= q_max on a uniform lattice, odd count per axis."""

    q_max: float
    n_q: int
    dim: int = 1
    zeta: float | None = None

    def __post_init__(self):
        if not self.q_max > 0:
            raise ConfigurationError("q_max must be positive")
        if self.n_q < 3 or self.n_q % 2 == 0:
            raise ConfigurationError("n_q must be an odd integer >= 3")

    @property
    def spacing(self) -> float:
        return 2.0 * self.q_max / (self.n_q - 1)

    def velocities(self) -> np.ndarray:
        """Array of shape (count, dim); the axis-wise values are symmetric so q=0 is exact."""
        half = (self.n_q - 1) // 2
        axis = np.arange(-half, half + 1) * self.spacing
        grids = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def count(self) -> int:
        return self.n_q**self.dim


# ---------------------------------------------------------------------------
# closed-form trigonometric fields


@dataclass(frozen=True)
class TrigField:
    """Sum of terms c*cos(2 pi k.x) + s*sin(2 pi k.x)."""

    terms: tuple[tuple[tuple[int, ...], float, float], ...] = ()

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for k, c, s in self.terms:
            phase = 2 * np.pi * (x @ np.asarray(k, dtype=float))
            out = out + c * np.cos(phase) + s * np.sin(phase)
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for k, c, s in self.terms:
            kv = np.asarray(k, dtype=float)
            phase = 2 * np.pi * (x @ kv)
            scal = 2 * np.pi * (-c * np.sin(phase) + s * np.cos(phase))
            out = out + scal[..., None] * kv
        return out

    def sup_bound(self) -> float:
        return float(sum(np.hypot(c, s) for _, c, s in self.terms))


def cosine_potential(amplitude: float = 1.0, frequency: int = 1, dim: int = 1) -> TrigField:
    """amplitude * sum_d cos(2 pi frequency x_d)."""
    terms = []
    for d in range(dim):
        k = [0] * dim
        k[d] = frequency
        terms.append((tuple(k), float(amplitude), 0.0))
    return TrigField(tuple(terms))


@dataclass(frozen=True)
class Diffusion:
    """Scalar coefficient a(x) or 2x2 matrix A(x).

    kinds: ``constant`` (scalar value or matrix entries), ``sin2``
    (coef * mean_d sin^2(pi x_d)), ``diag_sin2`` (coef * diag(sin^2 pi x_d)).
    """

    kind: str = "constant"
    coef: float = 0.0
    matrix_entries: tuple[tuple[float, ...], ...] | None = None

    @property
    def is_matrix(self) -> bool:
        return self.kind == "diag_sin2" or self.matrix_entries is not None

    def scalar(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_matrix:
            raise ConfigurationError("matrix diffusion has no scalar value")
        if self.kind == "constant":
            return np.full(x.shape[:-1], float(self.coef))
        if self.kind == "sin2":
            return self.coef * np.mean(np.sin(np.pi * x) ** 2, axis=-1)
        raise ConfigurationError(f"unknown diffusion kind {self.kind!r}")

    def matrix(self, x: np.ndarray) -> np.ndarray:
        """A(x) with shape x.shape[:-1] + (dim, dim); scalar kinds give a(x) I."""
        x = np.asarray(x, dtype=float)
        dim = x.shape[-1]
        if self.kind == "diag_sin2":
            out = np.zeros(x.shape[:-1] + (dim, dim))
            for d in range(dim):
                out[..., d, d] = self.coef * np.sin(np.pi * x[..., d]) ** 2
            return out
        if self.matrix_entries is not None:
            mat = np.asarray(self.matrix_entries, dtype=float)
            if mat.shape != (dim, dim):
                raise ConfigurationError(f"matrix entries shape {mat.shape} != ({dim},{dim})")
            return np.broadcast_to(mat, x.shape[:-1] + (dim, dim)).copy()
        return self.scalar(x)[..., None, None] * np.eye(dim)

    def max_eigenvalue(self, grid: TorusGrid) -> float:
        return float(np.max(np.linalg.eigvalsh(self.matrix(grid.points()))))


SUPPORTED_FAMILIES = ("power", "quadratic")


@dataclass(frozen=True)
class ModelSpec:
    """H(x,p) = |p|^m/m + b(x).p - V(x) + c_shift with diffusion a or A."""

    family: str = "quadratic"
    m: float = 2.0
    C0: float = 10.0
    potential: TrigField = field(default_factory=TrigField)
    drift: tuple[TrigField, ...] | None = None
    diffusion: Diffusion = field(default_factory=Diffusion)
    c_shift: float = 0.0

    def __post_init__(self):
        if self.family not in SUPPORTED_FAMILIES:
            raise ConfigurationError(f"unknown Hamiltonian family {self.family!r}")
        if self.family == "quadratic" and self.m != 2.0:
            raise ConfigurationError("the quadratic family has m = 2")
        if not self.m > 1:
            raise ConfigurationError("growth exponent m must exceed 1")
        if not self.C0 > 0:
            raise ConfigurationError("C0 must be positive")

    @property
    def m_conj(self) -> float:
        return self.m / (self.m - 1.0)

    def with_shift(self, c_shift: float) -> "ModelSpec":
        return ModelSpec(self.family, self.m, self.C0, self.potential, self.drift,
                         self.diffusion, float(c_shift))

    def drift_field(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.drift is None:
            return np.zeros(x.shape)
        return np.stack([f.value(x) for f in self.drift], axis=-1)

    def drift_jacobian(self, x: np.ndarray) -> np.ndarray:
        """J[..., i, j] = d b_i / d x_j."""
        x = np.asarray(x, dtype=float)
        if self.drift is None:
            return np.zeros(x.shape + (x.shape[-1],))
        return np.stack([f.gradient(x) for f in self.drift], axis=-2)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(v, dtype=float) ** 2, axis=-1))


def _power_grad(v: np.ndarray, exponent: float) -> np.ndarray:
    """Gradient of |v|^exponent / exponent, i.e. |v|^(exponent-2) v, zero at v = 0."""
    r = _norm(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, r ** (exponent - 2.0), 0.0)
    return scale[..., None] * v


def _as_points(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    return x


def eval_hamiltonian(model: ModelSpec, x, p) -> np.ndarray | float:
    x = _as_points(x)
    p = _as_points(p)
    val = _norm(p) ** model.m / model.m + np.sum(model.drift_field(x) * p, axis=-1)
    val = val - model.potential.value(x) + model.c_shift
    return float(val) if np.ndim(val) == 0 else val


def hamiltonian_grad_p(model: ModelSpec, x, p) -> np.ndarray:
    x = _as_points(x)
    p = _as_points(p)
    return _power_grad(p, model.m) + model.drift_field(x)


def hamiltonian_grad_x(model: ModelSpec, x, p) -> np.ndarray:
    x = _as_points(x)
    p = _as_points(p)
    jac = model.drift_jacobian(x)
    return np.einsum("...ij,...i->...j", jac, p) - model.potential.gradient(x)


def eval_lagrangian(model: ModelSpec, x, q) -> np.ndarray | float:
    """Closed-form Legendre transform |q - b|^m'/m' + V - c_shift."""
    x = _as_points(x)
    q = _as_points(q)
    mc = model.m_conj
    val = _norm(q - model.drift_field(x)) ** mc / mc + model.potential.value(x) - model.c_shift
    return float(val) if np.ndim(val) == 0 else val


def lagrangian_grad_q(model: ModelSpec, x, q) -> np.ndarray:
    x = _as_points(x)
    q = _as_points(q)
    return _power_grad(q - model.drift_field(x), model.m_conj)


@dataclass(frozen=True)
class NumericLegendre:
    value: float
    maximizer: np.ndarray
    on_boundary: bool


def legendre_numeric(model: ModelSpec, x, q, p_max: float, n_p: int) -> NumericLegendre:
    """Brute-force sup over a p-lattice of p.q - H(x,p); testing oracle only."""
    x = _as_points(x)
    q = _as_points(q)
    dim = q.shape[-1]
    axis = np.linspace(-p_max, p_max, n_p)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*([axis] * dim), indexing="ij")], axis=-1)
    vals = mesh @ q - eval_hamiltonian(model, np.broadcast_to(x, mesh.shape), mesh)
    k = int(np.argmax(vals))
    pstar = mesh[k]
    boundary = bool(np.any(np.isclose(np.abs(pstar), p_max)))
    if boundary:
        warnings.warn("Legendre maximiser on the search-box boundary; increase p_max", RuntimeWarning)
    return NumericLegendre(float(vals[k]), pstar, boundary)


@dataclass
class AssumptionReport:
    valid: bool
    margins: dict[str, float]
    worst_location: dict[str, tuple]
    failures: list[str]
    notes: list[str]

    def summary(self) -> str:
        lines = [f"valid: {self.valid}"]
        for name, val in self.margins.items():
            lines.append(f"  {name:<22s} worst margin {val:+.6g} at {self.worst_location[name]}")
        lines += [f"  FAIL {f}" for f in self.failures]
        lines += [f"  note {n}" for n in self.notes]
        return "\n".join(lines)


def _sample_momenta(dim: int, p_samples: int, p_top: float = 10.0) -> np.ndarray:
    radii = np.linspace(0.0, p_top, p_samples)
    if dim == 1:
        return np.concatenate([-radii[::-1], radii[1:]])[:, None]
    ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return (radii[:, None, None] * dirs[None]).reshape(-1, 2)


def check_assumptions(model: ModelSpec, grid: TorusGrid, p_samples: int = 41) -> AssumptionReport:
    """Sampled audit of the growth bounds and of diffusion semidefiniteness."""
    pts = grid.points().reshape(-1, grid.dim)
    ps = _sample_momenta(grid.dim, p_samples)
    X = np.repeat(pts, len(ps), axis=0)
    P = np.tile(ps, (len(pts), 1))
    C0, m = model.C0, model.m
    H = eval_hamiltonian(model, X, P)
    r = _norm(P)
    checks = {
        "lower growth": H - (r**m / C0 - C0),
        "upper growth": C0 * (r**m + 1) - H,
        "x-derivative": C0 * (1 + r**m) - _norm(hamiltonian_grad_x(model, X, P)),
        "p-derivative": C0 * (1 + r ** (m - 1)) - _norm(hamiltonian_grad_p(model, X, P)),
    }
    # the same samples serve as velocities for the Lagrangian lower bound
    Lq = eval_lagrangian(model, X, P)
    checks["lagrangian lower"] = Lq - (r**model.m_conj / C0 - C0)

    margins, where, failures, notes = {}, {}, [], []
    for name, marg in checks.items():
        k = int(np.argmin(marg))
        margins[name] = float(marg[k])
        where[name] = (tuple(float(v) for v in np.round(X[k], 6)), tuple(float(v) for v in np.round(P[k], 6)))
        if marg[k] < -1e-12:
            failures.append(f"{name} violated at x={where[name][0]}, p={where[name][1]}")

    eig = np.linalg.eigvalsh(model.diffusion.matrix(pts))
    kmin = int(np.argmin(eig.min(axis=-1)))
    margins["diffusion psd"] = float(eig.min())
    where["diffusion psd"] = (tuple(float(v) for v in np.round(pts[kmin], 6)), ())
    if eig.min() < -1e-12:
        failures.append(f"diffusion not positive semidefinite at x={where['diffusion psd'][0]}")
    degenerate = np.where(eig.min(axis=-1) <= 1e-12)[0]
    if len(degenerate):
        notes.append(f"diffusion degenerates at {len(degenerate)} node(s), first x={tuple(float(v) for v in np.round(pts[degenerate[0]], 6))}")
    if m > 2:
        notes.append("D2_pp H vanishes at p = 0 (m > 2); convexity and coercivity still hold")
    return AssumptionReport(not failures, margins, where, failures, notes)
