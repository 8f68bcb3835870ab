import numpy as np
import pytest

from sdevt import sde, spaces, transfer


@pytest.fixture(scope="session")
def ou_model():
    return sde.make_model("ou")


@pytest.fixture(scope="session")
def ou_grid():
    return spaces.GridSpec(1, 6.0, 512)


@pytest.fixture(scope="session")
def ou_matrix(ou_model, ou_grid):
    return transfer.build_transfer_matrix(ou_model, 0.5, ou_grid)


@pytest.fixture(scope="session")
def ou_f0(ou_matrix):
    return transfer.invariant_density(ou_matrix).eigenfunction


@pytest.fixture(scope="session")
def ou_psi(ou_grid):
    return spaces.gaussian_reference(ou_grid)


@pytest.fixture(scope="session")
def ou_analytic_density(ou_grid):
    vals = np.exp(-ou_grid.centers[:, 0] ** 2) / np.sqrt(np.pi)
    return vals
