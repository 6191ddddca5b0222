import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from holonomy.model import Diffusion, ModelSpec, TorusGrid, VelocityLattice, cosine_potential

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def eikonal(c_shift=-1.0, diffusion=None, dim=1):
    """H = |p|^2/2 + cos 2 pi x, shifted to ergodic constant 0 by default."""
    return ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0, 1, dim), c_shift=c_shift,
                     diffusion=diffusion or Diffusion())


def two_well(c_shift=-1.0):
    return ModelSpec("power", 2.0, 10.0, potential=cosine_potential(-1.0, 2), c_shift=c_shift)


def trivial(a=0.1):
    return ModelSpec("quadratic", 2.0, 10.0, diffusion=Diffusion("constant", a))


@pytest.fixture
def grid16():
    return TorusGrid(1, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sin_data(grid, amp=1.0):
    from holonomy.model import GridFunction

    x = grid.points()[..., 0]
    return GridFunction(grid, amp * np.sin(2 * np.pi * x))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: the twelve acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
