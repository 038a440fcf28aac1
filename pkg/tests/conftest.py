import numpy as np
import pytest

import pyrcn.utils
from pyrcn.network import AvailabilityProfile, CacheNetwork


@pytest.fixture(autouse=True)
def fresh_logging():
    """get_logger refuses to be configured twice; every CLI run configures it once."""
    yield
    pyrcn.utils.log_level = None
    pyrcn.utils.debug_logfile_handler = None
    pyrcn.utils.debug_log_filter = None


@pytest.fixture
def ring():
    """Two caches linked both ways, one file requested at both."""
    return CacheNetwork(
        M=np.array([[0, 1], [1, 0]]),
        s=np.array([1.0, 1.0]),
        eta=np.array([4.0, 4.0]),
        lambda_ext=np.array([[1.0], [1.0]]),
        t=np.array([1.0]),
    )


@pytest.fixture
def half_cached():
    return AvailabilityProfile(np.array([[0.5], [0.5]]))


RING_FILE = """\
# two caches linked both ways
[topology]
1 2 both

[caches]
1 1 4
2 1 4

[files]
1 1

[demand]
1 1 1
2 1 1

[availability]
1 1 0.5
2 1 0.5
"""


@pytest.fixture
def ring_file(tmp_path):
    path = tmp_path / "ring.net"
    path.write_text(RING_FILE)
    return path


@pytest.fixture
def ring_text():
    return RING_FILE
