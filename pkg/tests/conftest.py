import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message="Solution may be inaccurate")
warnings.filterwarnings("ignore", message=".*compressed sparse.*")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
