import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thinhomog.geometry import PeriodicProfile

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def cosine_g():
    return PeriodicProfile.cosine(2.0, 1.0)


@pytest.fixture
def cosine_h():
    return PeriodicProfile.cosine(1.0, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
