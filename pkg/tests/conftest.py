import logging

import numpy as np
import pytest

logging.getLogger("fuss").setLevel(logging.ERROR)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
