import numpy as np
import pytest

from qfluct.constants import DEFAULT_IDLE_TIMES


@pytest.fixture
def idle_times():
    return DEFAULT_IDLE_TIMES.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
