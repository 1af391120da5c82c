from pathlib import Path

import numpy as np
import pytest

MNIST5K = Path(__file__).parent / "data" / "mnist5k"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_root():
    return MNIST5K
