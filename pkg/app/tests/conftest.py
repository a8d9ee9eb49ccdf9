import pytest

from app.core.config import settings
from app.schemas import Dataset, FitConfig
from app.tests.utils.data import two_nsd

assert settings.ENVIRONMENT == "test"
assert settings.THREADS == 1

SIGMA0 = 0.025
NOISE_LEVEL = 0.0117


@pytest.fixture(scope="session")
def two_clusters() -> Dataset:
    """(0,1)-NSD and (5,1)-NSD with 25 points each"""
    return two_nsd(0.0, 5.0)


@pytest.fixture(scope="session")
def far_clusters() -> Dataset:
    """(0,1)-NSD and (50,1)-NSD with 25 points each"""
    return two_nsd(0.0, 50.0)


@pytest.fixture(scope="session")
def cfg() -> FitConfig:
    return FitConfig(sigma0=SIGMA0, restarts=5, seed=0, threads=1)


@pytest.fixture(scope="session")
def quick_cfg() -> FitConfig:
    """Few restarts for searches that refit many times"""
    return FitConfig(sigma0=SIGMA0, restarts=2, seed=0, threads=1)
