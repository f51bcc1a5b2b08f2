import math

import numpy as np
import pytest
from scipy import optimize, special

from moserlab.forms import assemble
from moserlab.mesh import build_disc_mesh, unit_square_mesh
from moserlab.torus import TorusGrid

# acceptance outcomes, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def bessel_zero(order: int, index: int) -> float:
    """index-th positive zero of J_order, bracketed on a grid then bisected."""
    f = lambda x: special.jv(order, x)
    xs = np.linspace(0.1, 40.0, 4000)
    vals = f(xs)
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa * fb < 0:
            roots.append(optimize.bisect(f, a, b, xtol=1e-14))
    return roots[index - 1]


def torus_regular_part_ewald(L: float = 1.0, T: float = 0.05, nmax: int = 8) -> float:
    """Regular part of the mean-zero Green function of the flat torus via the heat kernel split."""
    # scale to the unit torus: G_L(x) = G_1(x/L) and log r picks up log L
    A = (math.log(4 * T) - np.euler_gamma) / (4 * math.pi) - T
    rng = range(-nmax, nmax + 1)
    for i in rng:
        for j in rng:
            if i == 0 and j == 0:
                continue
            n2 = i * i + j * j
            A += special.exp1(n2 / (4 * T)) / (4 * math.pi)
            A += math.exp(-4 * math.pi**2 * n2 * T) / (4 * math.pi**2 * n2)
    return A + math.log(L) / (2 * math.pi)


@pytest.fixture(scope="session")
def disc2():
    return build_disc_mesh(1.0, 2)


@pytest.fixture(scope="session")
def disc3():
    return build_disc_mesh(1.0, 3)


@pytest.fixture(scope="session")
def disc3_forms(disc3):
    return assemble(disc3)


@pytest.fixture(scope="session")
def square3():
    return unit_square_mesh(3)


@pytest.fixture(scope="session")
def square3_forms(square3):
    return assemble(square3)


@pytest.fixture(scope="session")
def torus32():
    return TorusGrid(1.0, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
