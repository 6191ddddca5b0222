import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from holonomy.model import ConfigurationError, Diffusion, GridFunction, ModelSpec, TorusGrid, VelocityLattice, \
    check_assumptions, cosine_potential, eval_hamiltonian, eval_lagrangian, legendre_numeric

from oracles import legendre_brute


def test_grid_geometry():
    g = TorusGrid(2, 8)
    assert g.h * g.n == 1.0
    assert g.shape == (8, 8) and g.size == 64
    assert tuple(g.wrap(np.array([-1, 9]))) == (7, 1)


def test_velocity_lattice_symmetric_with_zero():
    v = VelocityLattice(2.5, 33).velocities()[:, 0]
    assert np.any(v == 0)
    np.testing.assert_allclose(np.sort(v), np.sort(-v))


def test_hamiltonian_examples():
    assert eval_hamiltonian(ModelSpec("power", 2.0), [0.3], [1.0]) == pytest.approx(0.5)
    assert eval_hamiltonian(ModelSpec("power", 2.0, potential=cosine_potential(1.0)), [0.0], [0.0]) == pytest.approx(-1.0)
    assert eval_hamiltonian(ModelSpec("power", 3.0), [0.1], [2.0]) == pytest.approx(8 / 3)


def test_lagrangian_examples():
    assert eval_lagrangian(ModelSpec("power", 2.0), [0.2], [1.0]) == pytest.approx(0.5)
    assert eval_lagrangian(ModelSpec("power", 3.0), [0.2], [1.0]) == pytest.approx(2 / 3)
    assert eval_lagrangian(ModelSpec("power", 2.0, potential=cosine_potential(1.0)), [0.5], [0.0]) == pytest.approx(-1.0)


def test_unknown_family_rejected():
    with pytest.raises(ConfigurationError):
        ModelSpec("cubic", 2.0)
    with pytest.raises(ConfigurationError):
        ModelSpec("power", 1.0)


@pytest.mark.parametrize("m,q,expected,tol", [(2.0, 1.0, 0.5, 1e-4), (3.0, 1.0, 2 / 3, 1e-3)])
def test_legendre_numeric_matches_lattice_oracle(m, q, expected, tol):
    model = ModelSpec("power", m)
    val = legendre_numeric(model, [0.0], [q], 4.0, 401).value
    assert abs(val - expected) <= tol
    assert abs(val - legendre_brute(lambda p: np.abs(p) ** m / m, q, 4.0, 401)) <= 1e-12


def test_legendre_at_zero_velocity_is_minus_min_h():
    model = ModelSpec("power", 2.0, potential=cosine_potential(0.7))
    for x in (0.0, 0.3):
        val = legendre_numeric(model, [x], [0.0], 3.0, 301).value
        assert val == pytest.approx(-eval_hamiltonian(model, [x], [0.0]), abs=1e-12)


def test_legendre_boundary_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = legendre_numeric(ModelSpec("power", 2.0), [0.0], [5.0], 1.0, 11)
    assert res.on_boundary and caught


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.sampled_from([1.5, 2.0, 3.0, 4.0]))
def test_young_inequality(p, q, x, m):
    model = ModelSpec("power", m, potential=cosine_potential(0.4, 2), c_shift=0.3)
    lhs = eval_hamiltonian(model, [x], [p]) + eval_lagrangian(model, [x], [q])
    assert lhs >= p * q - 1e-9 * (1 + abs(p * q))


@given(st.floats(-2, 2), st.floats(0, 1), st.sampled_from([2.0, 3.0]))
def test_closed_form_lagrangian_matches_numeric(q, x, m):
    model = ModelSpec("power", m, potential=cosine_potential(0.4))
    num = legendre_numeric(model, [x], [q], 6.0, 6001).value
    assert abs(num - eval_lagrangian(model, [x], [q])) <= 2e-3


def test_assumption_reports():
    g = TorusGrid(1, 32)
    assert check_assumptions(ModelSpec("power", 2.0, 10.0, potential=cosine_potential(1.0)), g).valid
    bad = check_assumptions(ModelSpec("power", 2.0, 0.1, potential=cosine_potential(1.0)), g)
    assert not bad.valid and any("lower growth" in f for f in bad.failures)
    deg = check_assumptions(ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("sin2", 1.0)), g)
    assert deg.valid and any("degenerates" in n for n in deg.notes)


def test_matrix_diffusion_is_psd_and_diagonal():
    g = TorusGrid(2, 8)
    A = Diffusion("diag_sin2", 0.5).matrix(g.points())
    assert np.all(np.linalg.eigvalsh(A) >= -1e-15)
    assert np.all(A[..., 0, 1] == 0)


def test_grid_function_shape_checked():
    with pytest.raises(Exception):
        GridFunction(TorusGrid(1, 8), np.zeros(7))
