from __future__ import annotations

import numpy as np
from hypothesis import given, settings, strategies as st

from smneuro.cartpole import Action
from smneuro.codec import EncoderConfig, decode, encode

CFG = EncoderConfig()
obs_st = st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4)


def test_zero_observation_encodes_to_zero():
    assert encode([0, 0, 0, 0], CFG).tolist() == [0] * 8


def test_full_range_hits_max_count():
    c = encode([CFG.ranges[0], 0, 0, 0], CFG)
    assert c[0] == CFG.max_count and c[1:].tolist() == [0] * 7


def test_half_negative_range():
    c = encode([-CFG.ranges[0] / 2, 0, 0, 0], CFG)
    assert c[1] == round(CFG.max_count / 2) and c[0] == 0


def test_clamped_beyond_range():
    assert encode([100.0, 0, 0, 0], CFG)[0] == CFG.max_count


def test_decode_examples():
    assert decode((10, 3)) is Action.LEFT
    assert decode((3, 10)) is Action.RIGHT
    assert decode((5, 5), Action.LEFT) is Action.LEFT
    assert decode((5, 5)) is Action.RIGHT


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 500), st.integers(0, 500), st.integers(-500, 500), st.sampled_from([None, *Action]))
def test_decode_argmax_invariance(a, b, k, prev):
    if min(a + k, b + k) < 0:
        k = -min(a, b)
    assert decode((a, b), prev) is decode((a + k, b + k), prev)


@settings(max_examples=1000, deadline=None)
@given(obs_st)
def test_encode_odd_symmetry(obs):
    c = encode(obs, CFG)
    m = encode([-v for v in obs], CFG)
    assert c[0::2].tolist() == m[1::2].tolist()
    assert c[1::2].tolist() == m[0::2].tolist()


@settings(max_examples=1000, deadline=None)
@given(obs_st, st.integers(1, 400))
def test_encode_within_range(obs, max_count):
    c = encode(obs, EncoderConfig(max_count=max_count))
    assert np.all((c >= 0) & (c <= max_count))
    # at most one channel of each pair is active
    assert np.all(np.minimum(c[0::2], c[1::2]) == 0)
