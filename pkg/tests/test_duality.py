import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from holonomy.duality import SolutionFamily, dual_value_d, dual_value_ht, generate_solution_family, m_function, \
    monotone_value_check, stationary_from_duals, trajectory_from_duals, uniform_convergence_test
from holonomy.measures import DiscreteMeasure, Discretization, divisible_time_step, ht_value, mane_potential, \
    project_measure, solve_mather_lp
from holonomy.model import ConfigurationError, Diffusion, GridFunction, ModelSpec, TorusGrid, VelocityLattice, \
    cosine_potential
from holonomy.pde import SolveConfig, solve_cauchy

EIKONAL = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0)
G12, V5 = TorusGrid(1, 12), VelocityLattice(1.0, 5)


def lattice_cfg(model, T):
    dt = divisible_time_step(model, G12, V5, 0.0)
    return SolveConfig(T_final=T, scheme="lattice", velocity=V5, dt=dt, cfl_safety=1.0), dt


def seeds(grid):
    x = grid.points()[..., 0]
    return [GridFunction(grid, v) for v in (np.zeros(grid.n), np.sin(2 * np.pi * x), -np.abs(np.sin(np.pi * x)))]


def test_trivial_family_collapses_to_constants():
    model = ModelSpec("quadratic", 2.0, diffusion=Diffusion("constant", 0.1))
    fam = generate_solution_family(model, seeds(G12), SolveConfig(T_final=50.0))
    assert len(fam) == 1


def test_empty_seed_list_rejected():
    with pytest.raises(ValueError):
        generate_solution_family(EIKONAL, [], SolveConfig(T_final=1.0))


def test_nonconverging_seed_dropped_with_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fam = generate_solution_family(EIKONAL, seeds(G12)[1:2], SolveConfig(T_final=0.5), tol=1e-14)
    assert len(fam) == 0 and any("dropped" in str(w.message) for w in caught)


@pytest.fixture(scope="module")
def eikonal_family():
    cfg, _ = lattice_cfg(EIKONAL, 400.0)
    return generate_solution_family(EIKONAL, seeds(G12), cfg, tol=1e-13)


@given(st.integers(0, 11), st.integers(0, 11))
def test_m_function_properties(eikonal_family, i, j):
    a, b = DiscreteMeasure.point(G12, i), DiscreteMeasure.point(G12, j)
    assert m_function(eikonal_family, a, a) == 0.0
    assert m_function(eikonal_family, a, b) >= -m_function(eikonal_family, b, a) - 1e-12
    assert dual_value_d(eikonal_family, a, b) == m_function(eikonal_family, a, b)


def test_m_below_d_for_well_and_peak(eikonal_family):
    _, dt = lattice_cfg(EIKONAL, 1.0)
    disc = Discretization(G12, V5, 0.0, dt)
    well, peak = DiscreteMeasure.point(G12, 0), DiscreteMeasure.point(G12, 6)
    for a, b in ((well, peak), (peak, well)):
        d = mane_potential(EIKONAL, disc, a, b, [1, 2, 4, 8]).d
        assert m_function(eikonal_family, a, b) <= d + 1e-6


def test_lp_dual_injection_reproduces_ht():
    _, dt = lattice_cfg(EIKONAL, 1.0)
    disc = Discretization(G12, V5, 0.0, dt)
    nu0, nu1 = DiscreteMeasure.point(G12, 2), DiscreteMeasure.uniform(G12)
    res = ht_value(EIKONAL, disc, nu0, nu1, 2.0)
    fam = SolutionFamily("evolving", [trajectory_from_duals(EIKONAL, res)])
    assert dual_value_ht(fam, nu0, nu1, 2.0) == pytest.approx(res.value, abs=1e-9)


def test_generic_trajectories_bound_ht_from_below():
    cfg, dt = lattice_cfg(EIKONAL, 2.0)
    disc = Discretization(G12, V5, 0.0, dt)
    fam = generate_solution_family(EIKONAL, seeds(G12), cfg, kind="evolving")
    for i, j in ((0, 6), (3, 3), (1, 9)):
        a, b = DiscreteMeasure.point(G12, i), DiscreteMeasure.point(G12, j)
        assert dual_value_ht(fam, a, b, 2.0) <= ht_value(EIKONAL, disc, a, b, 2.0).value + 1e-9
    const = SolutionFamily("evolving", [solve_cauchy(ModelSpec("quadratic", 2.0), GridFunction(G12, np.ones(12)),
                                                     SolveConfig(T_final=2.0))])
    assert dual_value_ht(const, DiscreteMeasure.point(G12, 4), DiscreteMeasure.point(G12, 4), 2.0) == 0.0


def test_stationary_duals_are_a_subsolution_exact_on_support():
    lp = solve_mather_lp(EIKONAL, G12, V5)
    w = stationary_from_duals(lp)
    cfg, _ = lattice_cfg(EIKONAL, 1.0)
    after = solve_cauchy(EIKONAL.with_shift(EIKONAL.c_shift - lp.value), w, cfg).final.values
    assert np.all(after >= w.values - 1e-12)
    support = project_measure(lp.measure).weights > 1e-9
    np.testing.assert_allclose(after[support], w.values[support], atol=1e-9)


def test_monotone_under_mather_and_control():
    lp = solve_mather_lp(EIKONAL, G12, V5)
    nu = project_measure(lp.measure)
    cfg, _ = lattice_cfg(EIKONAL, 2.0)
    cfg = SolveConfig(**{**cfg.__dict__, "snapshot_times": tuple(np.arange(0.1, 2.0, 0.1))})
    phi = GridFunction(G12, np.sin(2 * np.pi * G12.points()[..., 0]))
    assert monotone_value_check(EIKONAL, phi, nu, cfg) <= 1e-12
    assert monotone_value_check(EIKONAL, phi, DiscreteMeasure.uniform(G12), cfg) > 0


def test_uniform_convergence_guards():
    with pytest.raises(ConfigurationError):
        uniform_convergence_test(ModelSpec("power", 2.0, diffusion=Diffusion("constant", 0.1)), 2, 1e-2,
                                 SolveConfig(T_final=2.0), TorusGrid(1, 16))
    with pytest.raises(ValueError):
        uniform_convergence_test(ModelSpec("power", 3.0), 0, 1e-2, SolveConfig(T_final=2.0), TorusGrid(1, 16))


def test_uniform_convergence_small_run():
    rep = uniform_convergence_test(ModelSpec("power", 3.0, 10.0, potential=cosine_potential(-1.0)), 2, 5e-2,
                                   SolveConfig(T_final=6.0), TorusGrid(1, 32), scales=(1.0, 100.0))
    assert len(rep.per_sample) == 2 and 0 <= rep.T_common < 6.0
