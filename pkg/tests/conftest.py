import numpy as np
import pytest

from nonlocal_spde.spectral import Grid1D, assemble_operator, eigendecompose


@pytest.fixture(scope="session")
def laplace():
    """Dirichlet Laplacian on (0, pi) with 127 interior nodes and 8 modes."""
    grid = Grid1D(np.pi, 127)
    op = assemble_operator(grid)
    return grid, op, eigendecompose(op, 8)


@pytest.fixture(scope="session")
def laplace1(laplace):
    grid, op, basis = laplace
    return grid, op, basis.truncate(1)
