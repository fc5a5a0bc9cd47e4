"""Seed streams, worker pools, and float formatting."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetfx.util import format_float, parallel_map, seed_sequence, stream_rng


def _state(master, label, *indices):
    return tuple(seed_sequence(master, label, *indices).generate_state(4))


def test_seed_sequence_is_deterministic():
    assert _state(7, "trees", 3) == _state(7, "trees", 3)


def test_seed_sequence_separates_labels_and_indices():
    base = _state(7, "trees", 3)
    assert _state(7, "boot", 3) != base
    assert _state(7, "trees", 4) != base
    assert _state(8, "trees", 3) != base


def test_seed_sequence_keeps_high_bits_of_wide_seeds():
    # masters and indices differing only above bit 32 must not collide
    assert _state(1, "a") != _state(1 + 2**32, "a")
    assert _state(0, "a", 5) != _state(0, "a", 5 + 2**40)


def test_stream_rng_reproduces_draws():
    a = stream_rng(3, "noise", 1).random(5)
    b = stream_rng(3, "noise", 1).random(5)
    c = stream_rng(3, "noise", 2).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def _square(x):
    return x * x


def test_parallel_map_preserves_order():
    items = list(range(23))
    assert parallel_map(_square, items) == [x * x for x in items]


def test_parallel_map_worker_count_is_invisible():
    items = list(range(17))
    assert parallel_map(_square, items, workers=1) == parallel_map(
        _square, items, workers=3
    )


def _boom(x):
    raise RuntimeError("bad item")


def test_parallel_map_propagates_errors():
    with pytest.raises(RuntimeError):
        parallel_map(_boom, [1, 2], workers=2)


@given(
    st.floats(allow_nan=False, allow_infinity=False)
    | st.floats(min_value=-1e6, max_value=1e6)
)
def test_format_float_round_trips(x):
    assert float(format_float(x)) == x


def test_format_float_nan():
    assert format_float(float("nan")) == "nan"
    assert math.isnan(float(format_float(float("nan"))))
