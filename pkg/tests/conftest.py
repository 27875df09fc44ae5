import numpy as np
import pytest

from collinear_nbody.core import SystemSpec
from collinear_nbody.minimizer import minimize

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


_SOLVES = {}


def solved(masses, symmetric=False, T=1.0, sigma=None):
    """Cached default-schedule solve."""
    key = (tuple(masses), symmetric, T, None if sigma is None else tuple(sigma))
    if key not in _SOLVES:
        spec = SystemSpec(tuple(masses), T, sigma, symmetric)
        _SOLVES[key] = (spec, minimize(spec))
    return _SOLVES[key]


@pytest.fixture(scope="session")
def schubart():
    return solved((1, 1, 1), symmetric=True)


@pytest.fixture(scope="session")
def schubart_plain():
    return solved((1, 1, 1))


@pytest.fixture(scope="session")
def four_body():
    return solved((1, 2, 3, 4))


@pytest.fixture(scope="session")
def five_body():
    return solved((1, 2, 3, 4, 5))


def ejection_path(M, T=1.0):
    """Zero-energy two-body ejection r = 9**(1/3) t**(2/3) for unit masses."""
    from collinear_nbody.action import DiscretePath, graded_mesh

    t = graded_mesh(M, T)
    r = 9.0 ** (1.0 / 3.0) * t ** (2.0 / 3.0)
    return DiscretePath(t, np.vstack([-r / 2, r / 2]))


def random_feasible_path(rng, n, M, symmetric=False):
    from collinear_nbody.action import graded_mesh
    from collinear_nbody.gamma import GammaLayout

    masses = rng.uniform(0.5, 3.0, size=n)
    if symmetric:
        masses = 0.5 * (masses + masses[::-1])
    layout = GammaLayout(masses, graded_mesh(M, 1.0), symmetric=symmetric)
    w = rng.uniform(0.5, 1.5, size=layout.size)
    return masses, layout, w
