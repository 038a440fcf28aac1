import math

import numpy as np
import pytest

from pyrcn.errors import ConfigError
from pyrcn.netfile import format_network, parse_network, read_network, write_network
from pyrcn.network import AvailabilityProfile, CacheNetwork


def test_parse_ring(ring_text):
    net, profile = parse_network(ring_text)
    np.testing.assert_array_equal(net.M, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(net.s, [1.0, 1.0])
    np.testing.assert_array_equal(net.eta, [4.0, 4.0])
    np.testing.assert_array_equal(net.lambda_ext, [[1.0], [1.0]])
    np.testing.assert_array_equal(profile.pi, [[0.5], [0.5]])


def test_unbounded_and_missing_availability():
    net, profile = parse_network("[caches]\n1 inf inf\n[files]\n1 2\n")
    assert math.isinf(net.s[0]) and math.isinf(net.eta[0])
    assert net.t[0] == 2.0
    assert profile is None


def test_write_then_read(tmp_path):
    net = CacheNetwork(
        M=np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]]),
        s=np.array([2.0, 0.0, math.inf]),
        eta=np.array([1.5, math.inf, 0.1]),
        lambda_ext=np.array([[0.3, 0.0], [0.0, 1.0 / 3.0], [2.0, 0.25]]),
        t=np.array([1.0, 2.5]),
    )
    profile = AvailabilityProfile(np.array([[0.0, 1.0], [0.25, 0.0], [1.0, 0.5]]))
    path = tmp_path / "net.txt"
    write_network(path, net, profile)
    again, again_profile = read_network(path)
    np.testing.assert_array_equal(again.M, net.M)
    np.testing.assert_array_equal(again.s, net.s)
    np.testing.assert_array_equal(again.eta, net.eta)
    np.testing.assert_allclose(again.lambda_ext, net.lambda_ext, rtol=1e-11)
    np.testing.assert_array_equal(again_profile.pi, profile.pi)
    assert format_network(again, again_profile) == path.read_text()


@pytest.mark.parametrize(
    "text, message",
    [
        ("[links]\n1 2\n", "unknown section"),
        ("1 2\n", "outside of a section"),
        ("[caches]\n2 1 1\n[files]\n1 1\n", "cache 1 is not described"),
        ("[caches]\n1 one 1\n[files]\n1 1\n", "not a number"),
        ("[caches]\n0 1 1\n[files]\n1 1\n", "ids start at 1"),
        ("[topology]\n1 2 sideways\n[caches]\n1 1 1\n2 1 1\n[files]\n1 1\n", "expected 'h i'"),
        ("[caches]\n1 1 1\n[files]\n1 1\n[demand]\n1 2 1\n", "unknown cache or file"),
        ("[caches]\n[files]\n1 1\n", "must not be empty"),
    ],
)
def test_malformed(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_network(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_network(tmp_path / "nope.net")
