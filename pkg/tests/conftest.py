import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trrank.data import gen_synthetic

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def dataset():
    return gen_synthetic(233, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
