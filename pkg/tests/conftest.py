import numpy as np
import pytest

from liftmatch.backbone import NetWeights
from liftmatch.lifting import LiftWeights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def net_weights():
    return NetWeights.random(0)


@pytest.fixture(scope="session")
def lift_weights():
    return LiftWeights.random(0)
