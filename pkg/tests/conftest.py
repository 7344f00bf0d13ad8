import numpy as np
import pytest

from palevim.core import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def uniform_data(n, d, seed=0):
    X = np.random.default_rng(seed).random((n, d))
    return Dataset.from_array(X)
