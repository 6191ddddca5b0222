import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from holonomy.lp import solve_equality_lp
from holonomy.measures import FREE, DiscreteMeasure, Discretization, aubry_test, build_spacetime_constraints, \
    build_stationary_constraints, concatenate, convexity_check_ht, divisible_time_step, embed_stationary, \
    holonomy_defect, ht_value, mane_potential, peierls_barrier, project_measure, solve_free_source, \
    solve_ht_lp, solve_mather_lp
from holonomy.model import ConfigurationError, Diffusion, ModelSpec, TorusGrid, VelocityLattice, cosine_potential, \
    eval_lagrangian

from oracles import mather_q0_minimum

EIKONAL = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0)
G8, V5 = TorusGrid(1, 8), VelocityLattice(1.0, 5)


def disc_for(model, grid=G8, vlat=V5, eta=0.0):
    return Discretization(grid, vlat, eta, divisible_time_step(model, grid, vlat, eta))


def dense_generator_oracle(model, grid, q, eta):
    """Row i of q D^up - (a + eta) D^2 built entry by entry for a 1D grid."""
    n, h = grid.n, grid.h
    a = model.diffusion.scalar(grid.points()) + eta
    M = np.zeros((n, n))
    for i in range(n):
        if q >= 0:
            M[i, i] += q / h
            M[i, (i - 1) % n] -= q / h
        else:
            M[i, (i + 1) % n] += q / h
            M[i, i] -= q / h
        M[i, (i - 1) % n] -= a[i] / h**2
        M[i, (i + 1) % n] -= a[i] / h**2
        M[i, i] += 2 * a[i] / h**2
    return M


def test_stationary_matrix_matches_dense_oracle():
    model = ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("sin2", 0.3))
    sys_ = build_stationary_constraints(model, G8, V5, 0.01)
    A = sys_.matrix().toarray()
    blocks = [dense_generator_oracle(model, G8, q, 0.01).T for q in V5.velocities()[:, 0]]
    np.testing.assert_allclose(A[:-1], np.hstack(blocks), atol=1e-9)
    np.testing.assert_allclose(A[-1], 1.0)


def test_constant_test_function_row_is_conservative():
    model = ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("sin2", 0.3))
    A = build_stationary_constraints(model, G8, V5).matrix().toarray()[:-1]
    np.testing.assert_allclose(A.sum(axis=0), 0.0, atol=1e-9)


def test_zero_velocity_column_vanishes_without_diffusion():
    sys_ = build_stationary_constraints(EIKONAL, G8, V5)
    j0 = int(np.argmin(np.abs(V5.velocities()[:, 0])))
    assert sys_.generators[j0].nnz == 0 or np.all(sys_.generators[j0].toarray() == 0)


def test_mather_trivial_value_zero_on_rest_atoms():
    model = ModelSpec("power", 2.0)
    lp = solve_mather_lp(model, G8, V5)
    assert abs(lp.value) <= 1e-12
    q = V5.velocities()[:, 0]
    assert lp.measure.weights[q != 0].sum() <= 1e-12


@pytest.mark.parametrize("N", [8, 16, 32])
def test_mather_value_matches_rest_atom_oracle(N):
    """a = 0: every (x, 0) atom is holonomic on its own, and L >= L(x, 0) for this H."""
    grid = TorusGrid(1, N)
    model = EIKONAL.with_shift(0.0)
    lp = solve_mather_lp(model, grid, VelocityLattice(2.5, 9))
    L0 = eval_lagrangian(model, grid.points().reshape(-1, 1), np.zeros((N, 1)))
    assert lp.value == pytest.approx(mather_q0_minimum(L0), abs=1e-9)
    assert lp.value == pytest.approx(-1.0, abs=1e-9)
    nu = project_measure(lp.measure)
    assert nu.weights.sum() == pytest.approx(1.0) and nu.weights[0] == pytest.approx(1.0)


def test_uniform_is_stationary_projection_under_constant_diffusion():
    model = ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("constant", 0.2))
    nu = project_measure(solve_mather_lp(model, G8, V5).measure)
    np.testing.assert_allclose(nu.weights, 1 / 8, atol=1e-9)


def test_degenerate_diffusion_point_mass_at_zero():
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(0.5), diffusion=Diffusion("sin2", 1.0))
    lp = solve_mather_lp(model, G8, V5)
    assert lp.value <= eval_lagrangian(model, [0.0], [0.0]) + 1e-9


def test_strong_duality_and_defects():
    disc = disc_for(EIKONAL)
    res = ht_value(EIKONAL, disc, DiscreteMeasure.point(G8, 0), DiscreteMeasure.point(G8, 4), 1.0)
    assert res.feasible and res.solution.duality_gap <= 1e-9
    assert res.solution.primal_defect <= 1e-9 and res.solution.dual_defect <= 1e-9


def test_unreachable_target_is_infeasible():
    disc = Discretization(G8, VelocityLattice(1.0, 5), 0.0, 1 / 8)
    res = ht_value(EIKONAL, disc, DiscreteMeasure.point(G8, 0), DiscreteMeasure.point(G8, 4), 1 / 8)
    assert not res.feasible and math.isinf(res.value)


def test_horizon_must_be_multiple_of_dt():
    with pytest.raises(ConfigurationError):
        build_spacetime_constraints(EIKONAL, Discretization(G8, V5, 0.0, 0.3), 1.0, DiscreteMeasure.uniform(G8), FREE)


def test_trivial_uniform_to_uniform_zero():
    model = ModelSpec("quadratic", 2.0, diffusion=Diffusion("constant", 0.05))
    disc = Discretization(G8, V5, 0.0, divisible_time_step(model, G8, V5, 0.0))
    uni = DiscreteMeasure.uniform(G8)
    assert abs(ht_value(model, disc, uni, uni, 1.0).value) <= 1e-10
    assert abs(mane_potential(model, disc, uni, uni, [1, 2]).d) <= 1e-10
    assert aubry_test(model, disc, uni, schedule=(1, 2, 3), tail_window=2)


def test_mather_projection_has_zero_potentials():
    disc = disc_for(EIKONAL)
    lp = solve_mather_lp(EIKONAL, G8, V5)
    nu = project_measure(lp.measure)
    gamma = embed_stationary(lp.measure, 2.0, disc.time_step(EIKONAL))
    assert holonomy_defect(EIKONAL, disc, gamma) <= 1e-9
    assert gamma.action(lp.system.costs) == pytest.approx(2.0 * lp.value, abs=1e-12)
    assert ht_value(EIKONAL, disc, nu, nu, 2.0).value <= 1e-9
    mane = mane_potential(EIKONAL, disc, nu, nu, [1, 2, 4])
    assert abs(mane.d) <= 1e-9 and all(mane.d <= v + 1e-12 for _, v in mane.table)
    assert abs(peierls_barrier(EIKONAL, disc, nu, nu, (1, 2, 4), 2).h) <= 1e-9


def test_uniform_not_in_aubry_set_of_eikonal():
    assert not aubry_test(EIKONAL, disc_for(EIKONAL), DiscreteMeasure.uniform(G8), schedule=(1, 2, 4), tail_window=2)


def test_concatenation_of_embedded_measures():
    lp = solve_mather_lp(EIKONAL, G8, V5)
    dt = disc_for(EIKONAL).time_step(EIKONAL)
    a, b = embed_stationary(lp.measure, 1.0, dt), embed_stationary(lp.measure, 2.0, dt)
    joined = concatenate(a, b)
    np.testing.assert_allclose(joined.weights, embed_stationary(lp.measure, 3.0, dt).weights)
    with pytest.raises(ValueError):
        c = embed_stationary(solve_mather_lp(ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("constant", 0.2)),
                                             G8, V5).measure, 1.0, dt)
        concatenate(a, c)


def test_triangle_bound_through_concatenation():
    disc = disc_for(EIKONAL)
    p = [DiscreteMeasure.point(G8, i) for i in (0, 2, 5)]
    h1 = ht_value(EIKONAL, disc, p[0], p[1], 1.0)
    h2 = ht_value(EIKONAL, disc, p[1], p[2], 1.0)
    h12 = ht_value(EIKONAL, disc, p[0], p[2], 2.0)
    assert h12.value <= h1.value + h2.value + 1e-9
    joined = concatenate(h1.measure, h2.measure)
    assert holonomy_defect(EIKONAL, disc, joined) <= 1e-9


def test_convexity_in_initial_measure():
    disc = disc_for(EIKONAL)
    rep = convexity_check_ht(EIKONAL, disc, DiscreteMeasure.point(G8, 0), DiscreteMeasure.point(G8, 3),
                             DiscreteMeasure.uniform(G8), 1.0, [0.0, 0.5, 1.0])
    assert rep.ok
    assert abs(rep.rows[0][3]) <= 1e-9 and abs(rep.rows[-1][3]) <= 1e-9


@given(st.lists(st.floats(-2, 2), min_size=8, max_size=8), st.integers(0, 7),
       st.sampled_from([0.0, 0.03]), st.sampled_from([0.5, 1.0]))
def test_backward_induction_matches_highs(u0, node, a, t):
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), diffusion=Diffusion("constant", a))
    disc = Discretization(G8, V5, 0.0, divisible_time_step(model, G8, V5, 0.0, base=0.5))
    nu1 = DiscreteMeasure.point(G8, node).mix(DiscreteMeasure.uniform(G8), 0.5)
    system = build_spacetime_constraints(model, disc, t, nu1, FREE)
    u = np.asarray(u0)
    fast = solve_free_source(system, u)
    slow = solve_ht_lp(system, u)
    assert fast.value == pytest.approx(slow.value, abs=1e-8)
    assert fast.solution.primal_defect <= 1e-10 and fast.solution.dual_defect <= 1e-10
    assert fast.solution.duality_gap <= 1e-10


@given(st.integers(0, 7), st.integers(0, 7))
def test_free_source_is_never_empty(i, j):
    disc = disc_for(EIKONAL)
    nu1 = DiscreteMeasure.point(G8, i).mix(DiscreteMeasure.point(G8, j), 0.3)
    res = solve_ht_lp(build_spacetime_constraints(EIKONAL, disc, 1.0, nu1, FREE))
    assert res.feasible


def test_equality_lp_on_hand_example():
    # min x1 + 2 x2 s.t. x1 + x2 = 1: value 1, dual 1
    import scipy.sparse as sp

    sol = solve_equality_lp(np.array([1.0, 2.0]), sp.csr_matrix([[1.0, 1.0]]), np.array([1.0]))
    assert sol.optimal and sol.value == pytest.approx(1.0) and sol.duals[0] == pytest.approx(1.0)


def test_measure_validation():
    with pytest.raises(Exception):
        DiscreteMeasure(G8, np.full(8, 0.2))
    mix = DiscreteMeasure.point(G8, 1).mix(DiscreteMeasure.point(G8, 1), 0.3)
    assert mix.weights[1] == pytest.approx(1.0)
