import numpy as np
import pytest

from omnistereo.synth import default_intrinsics, square_rig


@pytest.fixture(scope="session")
def intr220():
    return default_intrinsics()


@pytest.fixture(scope="session")
def rig4():
    return square_rig()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
