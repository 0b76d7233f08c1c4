import numpy as np
import pytest

from riskpath import rng as rngmod


def draw(*addr, n=8):
    return rngmod.stream(*addr).standard_normal(n)


def test_same_address_same_draws():
    np.testing.assert_array_equal(draw(3, rngmod.PLANT, 10), draw(3, rngmod.PLANT, 10))


@pytest.mark.parametrize("other", [
    (4, rngmod.PLANT, 10),
    (3, rngmod.RISK, 10),
    (3, rngmod.PLANT, 11),
    (3, rngmod.PLANT, 10, 1),
])
def test_distinct_addresses_differ(other):
    assert not np.array_equal(draw(3, rngmod.PLANT, 10), draw(*other))


def test_index_order_matters():
    assert not np.array_equal(draw(0, rngmod.RISK, 1, 2), draw(0, rngmod.RISK, 2, 1))


def test_long_stream_does_not_reach_neighbour():
    # a stream reading a million values still differs from the next index
    a = rngmod.stream(0, rngmod.CONTROL, 5).standard_normal(1_000_000)[-8:]
    b = draw(0, rngmod.CONTROL, 6)
    assert not np.array_equal(a, b)


def test_too_many_indices():
    with pytest.raises(ValueError):
        rngmod.stream(0, rngmod.TEST, 1, 2, 3)
