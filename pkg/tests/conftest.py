import pytest
from hypothesis import HealthCheck, settings

from spacetime_tbm.catalog import spacetime

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mink2():
    return spacetime("minkowski2")


@pytest.fixture(scope="session")
def mink3():
    return spacetime("minkowski3")


@pytest.fixture(scope="session")
def warped():
    return spacetime("warped2")


@pytest.fixture(scope="session")
def weighted2():
    return spacetime("weighted_minkowski2", N=3)
