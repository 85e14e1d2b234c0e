import numpy as np
import pytest

from contactsteer import models


@pytest.fixture(scope="session")
def torus():
    structure = models.torus_contact()
    structure.ensure_constants()
    return structure


@pytest.fixture(scope="session")
def heis():
    structure = models.heisenberg()
    structure.ensure_constants()
    return structure


@pytest.fixture()
def flat():
    return models.flat_invalid()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
