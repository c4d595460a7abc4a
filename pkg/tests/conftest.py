import numpy as np
import pytest

from kernelskel.proxy import IdSelectParams

# small candidate grids keep unit tests fast; acceptance tests use the defaults
SMALL_ID = IdSelectParams(xd_count=300, yd_count=3000)


@pytest.fixture
def small_id():
    return SMALL_ID


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
