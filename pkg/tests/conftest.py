import numpy as np
import pytest

from cqbeats.params import SystemParams


@pytest.fixture
def default_params():
    return SystemParams.from_mhz()


@pytest.fixture
def small_params():
    """Single-photon truncation: fast, adequate at n <= 1."""
    return SystemParams.from_mhz(n_max_v=1, n_max_h=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
