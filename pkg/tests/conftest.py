import numpy as np
import pytest

from ma_lab.domain_grid import build_domain, discretize
from ma_lab.ma_solve import assemble_potential, solve_ma
from ma_lab.lma_solve import solve_lma


def pinched_density(grid, eps):
    X, Y = grid.meshes()
    x0, x1, y0, y1 = grid.domain.bbox()
    sx = np.sin(np.pi * (X - x0) / (x1 - x0))
    sy = np.sin(np.pi * (Y - y0) / (y1 - y0))
    return 1.0 + eps * sx * sy


@pytest.fixture(scope="session")
def disc_domain():
    return build_domain("disc", radius=1.0)


@pytest.fixture(scope="session")
def disc32(disc_domain):
    return solve_ma(discretize(disc_domain, 1.0 / 32), 1.0)


@pytest.fixture(scope="session")
def disc64(disc_domain):
    return solve_ma(discretize(disc_domain, 1.0 / 64), 1.0)


@pytest.fixture(scope="session")
def pinched32(disc_domain):
    """Solved eps=0.1 disc potential and an LMA solution on it."""
    grid = discretize(disc_domain, 1.0 / 32)
    pot = solve_ma(grid, pinched_density(grid, 0.1))
    X, Y = grid.meshes()
    f = np.sin(np.pi * X) * np.cos(np.pi * Y) + 2.0
    sol = solve_lma(pot, f)
    return pot, sol


@pytest.fixture(scope="session")
def model_disc():
    """Exact quadratic |x|^2/2 sampled on the unit disc at spacing 1/32."""
    grid = discretize(build_domain("disc", radius=1.0), 1.0 / 32)
    return assemble_potential(grid, lambda X, Y: 0.5 * (X ** 2 + Y ** 2), g=1.0)


@pytest.fixture(scope="session")
def model_disc_fine():
    """Same quadratic on the unit disc at spacing 1/64."""
    grid = discretize(build_domain("disc", radius=1.0), 1.0 / 64)
    return assemble_potential(grid, lambda X, Y: 0.5 * (X ** 2 + Y ** 2), g=1.0)


@pytest.fixture(scope="session")
def model_square():
    """Exact quadratic |x|^2/2 sampled on a side-4 square at spacing 1/32."""
    grid = discretize(build_domain("square", side=4.0), 1.0 / 32)
    return assemble_potential(grid, lambda X, Y: 0.5 * (X ** 2 + Y ** 2), g=1.0)


@pytest.fixture(scope="session")
def model_square_fine():
    """Same quadratic at spacing 1/128 for tight section-measure checks."""
    grid = discretize(build_domain("square", side=4.0), 1.0 / 128)
    return assemble_potential(grid, lambda X, Y: 0.5 * (X ** 2 + Y ** 2), g=1.0)
