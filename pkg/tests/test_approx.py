import numpy as np
import pytest
from hypothesis import given, strategies as st

from holonomy.approx import ConvolutionParams, MollifierSpec, appendix_b_subsolution_audit, delta0, \
    discrete_lipschitz, double_convolution, inf_convolution, kappa, mollify_spacetime, second_differences, \
    subsolution_residual_scan, sup_convolution
from holonomy.model import ConfigurationError, Diffusion, GridFunction, ModelSpec, TorusGrid, cosine_potential
from holonomy.pde import SolveConfig, solve_cauchy

from oracles import brute_sup_convolution, bump_multiplier_1d

G64 = TorusGrid(1, 64)


def trig(grid, coeffs):
    x = grid.points()[..., 0]
    return GridFunction(grid, sum(a * np.cos(2 * np.pi * (k + 1) * x + k) for k, a in enumerate(coeffs)))


coeffs = st.lists(st.floats(-1, 1), min_size=1, max_size=3)


# mollifier

@pytest.mark.parametrize("alpha", [2 / 64, 0.1, 0.25])
def test_kernels_unit_mass_and_symmetric(alpha):
    ker = MollifierSpec(alpha).space_kernel(G64)
    assert abs(ker.sum() - 1) <= 1e-12
    np.testing.assert_array_equal(ker[1:], ker[1:][::-1])
    rho = MollifierSpec(alpha).time_kernel(1 / 256)
    assert abs(rho.sum() - 1) <= 1e-12
    np.testing.assert_array_equal(rho, rho[::-1])


def test_kernel_needs_two_cells():
    with pytest.raises(ConfigurationError):
        MollifierSpec(1.5 / 64).space_kernel(G64)


@given(coeffs, st.floats(-10, 10), st.sampled_from([2 / 64, 0.1, 0.2]))
def test_constants_and_shifts_exact(c, shift, alpha):
    spec = MollifierSpec(alpha)
    w = trig(G64, c)
    base = mollify_spacetime(w, spec).values
    moved = mollify_spacetime(GridFunction(G64, w.values + shift), spec).values
    np.testing.assert_allclose(moved - base, shift, atol=1e-12 * (1 + abs(shift)))
    const = mollify_spacetime(GridFunction(G64, np.full(64, shift)), spec).values
    np.testing.assert_allclose(const, shift, atol=1e-12 * (1 + abs(shift)))


@pytest.mark.parametrize("alpha", [2 / 64, 0.1, 0.3])
def test_sine_multiplier_matches_direct_sum(alpha):
    x = G64.points()[..., 0]
    out = mollify_spacetime(GridFunction(G64, np.sin(2 * np.pi * x)), MollifierSpec(alpha)).values
    mult = bump_multiplier_1d(alpha, G64.h, 1)
    assert 0 < mult <= 1
    np.testing.assert_allclose(out, mult * np.sin(2 * np.pi * x), atol=1e-12)


def test_mollification_error_second_order():
    errs = []
    for N in (32, 64, 128):
        g = TorusGrid(1, N)
        x = g.points()[..., 0]
        w = GridFunction(g, np.sin(2 * np.pi * x))
        errs.append(np.max(np.abs(mollify_spacetime(w, MollifierSpec(2 / N)).values - w.values)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_time_mollification_shifts_forward():
    g = TorusGrid(1, 32)
    model = ModelSpec("quadratic", 2.0, potential=cosine_potential(0.0), c_shift=1.0)
    traj = solve_cauchy(model, GridFunction(g, np.zeros(32)), SolveConfig(T_final=1.0, store_every_step=True,
                                                                          lf_dissipation=1.0, dt=1 / 64))
    # u = -t exactly; alpha is a whole number of steps, so the kernel centred at lag alpha gives -(t + alpha)
    alpha = 0.125
    out = mollify_spacetime(traj, MollifierSpec(alpha))
    for t, f in zip(out.times, out.fields):
        np.testing.assert_allclose(f.values, -(t + alpha), atol=1e-12)


# residual scan

def test_residual_scan_kinked_degenerate():
    g = TorusGrid(1, 128)
    x = g.points()[..., 0]
    model = ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0), c_shift=-1.0,
                      diffusion=Diffusion("sin2", 0.1))
    traj = solve_cauchy(model, GridFunction(g, -np.minimum(x, 1 - x)),
                        SolveConfig(T_final=0.5, lf_dissipation=4.0, store_every_step=True))
    scan = subsolution_residual_scan(model, traj, [2.0 ** -k for k in range(3, 7)])
    assert not scan.undefined and scan.exponent >= 0.4
    assert min(scan.residuals) >= -scan.floor


def test_residual_scan_constant_solution_undefined():
    g = TorusGrid(1, 64)
    model = ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("constant", 0.1))
    traj = solve_cauchy(model, GridFunction(g, np.zeros(64)),
                        SolveConfig(T_final=0.5, lf_dissipation=1.0, store_every_step=True))
    scan = subsolution_residual_scan(model, traj, [2.0 ** -k for k in range(3, 6)])
    assert scan.undefined and scan.exponent is None


# sup / inf convolutions

@pytest.mark.parametrize("dim,n,eps", [(1, 16, 0.05), (1, 12, 0.2), (2, 6, 0.1)])
def test_sup_convolution_matches_brute_force(dim, n, eps):
    g = TorusGrid(dim, n)
    vals = np.random.default_rng(n).uniform(-1, 1, g.shape)
    # a radius covering the whole torus turns the ball search into the brute-force oracle
    got = sup_convolution(GridFunction(g, vals), eps, lip=10.0).values
    np.testing.assert_allclose(got, brute_sup_convolution(vals, eps, g.h), atol=1e-14)
    got = inf_convolution(GridFunction(g, vals), eps, lip=10.0).values
    np.testing.assert_allclose(got, -brute_sup_convolution(-vals, eps, g.h), atol=1e-14)


def test_ball_and_separable_paths_agree():
    g = TorusGrid(2, 16)
    P = g.points()
    w = GridFunction(g, np.sin(2 * np.pi * P[..., 0]) * np.cos(2 * np.pi * P[..., 1]))
    eps, delta = 0.05, 0.02
    inner = sup_convolution(w, eps + delta, lip=10.0)
    ball = inf_convolution(inner, delta, lip=10.0).values
    separable, _ = double_convolution(w, eps, delta, refine=1, raise_on_failure=False)
    np.testing.assert_allclose(separable.values, ball, atol=1e-13)


@given(coeffs, st.floats(0.01, 0.2), st.floats(0.01, 0.2))
def test_order_chain(c, eps, delta):
    w = trig(G64, c)
    up, down = sup_convolution(w, eps).values, inf_convolution(w, delta).values
    assert np.all(down <= w.values + 1e-14) and np.all(w.values <= up + 1e-14)
    both, _ = double_convolution(w, eps, delta, raise_on_failure=False, refine=1)
    assert np.all(both.values >= up - 1e-12)


@given(coeffs, st.floats(0.01, 0.2))
def test_sup_convolution_lipschitz_bound(c, eps):
    w = trig(G64, c)
    L = discrete_lipschitz(w.values, G64)
    assert discrete_lipschitz(sup_convolution(w, eps).values, G64) <= 2 * L + 1e-12


def test_constants_unchanged():
    g = TorusGrid(2, 8)
    w = GridFunction(g, np.full(g.shape, 3.0))
    assert np.all(sup_convolution(w, 0.1).values == 3.0)
    out, audit = double_convolution(w, 0.1, 0.05)
    np.testing.assert_allclose(out.values, 3.0, atol=1e-15)
    assert audit.passed and audit.upper == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("eps,delta", [(0.1, 0.05), (0.05, 0.02), (0.2, 0.1)])
def test_hessian_audit_kink_and_smooth(eps, delta):
    g = TorusGrid(2, 32)
    P = g.points()
    kink = GridFunction(g, np.abs(P[..., 0] - 0.5) + np.abs(P[..., 1] - 0.5))
    out, audit = double_convolution(kink, eps, delta)
    assert audit.passed and audit.upper >= 0.5 / delta
    smooth = GridFunction(g, np.sin(2 * np.pi * P[..., 0]) * np.cos(2 * np.pi * P[..., 1]) / np.pi)
    out, audit = double_convolution(smooth, eps, delta)
    L = discrete_lipschitz(smooth.values, g)
    assert audit.passed
    assert np.max(np.abs(out.values - smooth.values)) <= (eps + delta) * L**2


def test_hessian_audit_raises_with_node():
    g = TorusGrid(1, 32)
    w = GridFunction(g, np.abs(g.points()[..., 0] - 0.5))
    with pytest.raises(AssertionError, match="node"):
        double_convolution(w, 0.1, 0.05, slack=-100.0)


def test_second_differences_of_quadratic():
    g = TorusGrid(2, 16)
    P = g.points()
    v = 0.5 * ((P[..., 0] - 0.5) ** 2 + (P[..., 1] - 0.5) ** 2)
    d2 = second_differences(v, g)[:, 4:12, 4:12]
    np.testing.assert_allclose(d2, 1.0, atol=1e-10)


def test_convolution_params_positive():
    with pytest.raises(ConfigurationError):
        ConvolutionParams(0.1, 0.0, 0.1)


# budgets

def test_delta0_and_kappa_hand_values():
    assert delta0(1, 1, 1, 0, 1, 1) == 0.5
    assert abs(delta0(0.1, 0.01, 1, 1, 2, 2) - 0.001 / 1.31) <= 1e-15
    assert delta0(0.1, 1e-12, 1, 1, 2, 2) < 1e-11
    assert kappa(0.0, 0.0, 0.3, 0.2, 7.0, 2, 0.25) == 0.25
    with pytest.raises(ConfigurationError):
        delta0(0.0, 1, 1, 0, 1, 1)


@given(st.floats(1e-3, 1), st.floats(1e-3, 1), st.floats(1e-3, 1), st.floats(1e-3, 1), st.floats(0, 10),
       st.floats(0, 1))
def test_kappa_monotone_and_linear(alpha, eta, delta, eps, C, omega):
    base = kappa(alpha, eta, delta, eps, C, 2, omega)
    third = C * max(1 / eps, 1 / delta) * alpha
    assert kappa(2 * alpha, eta, delta, eps, C, 2, omega) == pytest.approx(base + third, rel=1e-12, abs=1e-12)
    assert kappa(alpha, 2 * eta, delta, eps, C, 2, omega) >= base


def test_audit_constant_solution_at_floor():
    g = TorusGrid(2, 16)
    model = ModelSpec("power", 2.0, 10.0, diffusion=Diffusion("diag_sin2", 0.5))
    traj = solve_cauchy(model, GridFunction(g, np.zeros(g.shape)),
                        SolveConfig(T_final=0.5, lf_dissipation=1.0, store_every_step=True))
    rep = appendix_b_subsolution_audit(model, traj, 0.1, 0.02, 2 / 16)
    assert rep.passed and abs(rep.max_residual) <= 1e-12
