import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onehot_sci.masking import (
    Mask,
    MaskKind,
    complement_mask,
    gen_one_hot_mask,
    gen_random_binary_mask,
    load_mask,
    save_mask,
    validate_one_hot,
)
from onehot_sci.rng import hash_u64, uniform01


def test_single_frame_is_all_ones():
    for seed in (0, 1, 12345):
        m = gen_one_hot_mask(2, 2, 1, seed)
        assert np.all(m.bits == 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 9), st.integers(0, 2**64 - 1))
def test_one_hot_invariant(H, W, B, seed):
    m = gen_one_hot_mask(H, W, B, seed)
    assert validate_one_hot(m)
    assert np.all(m.bits.sum(axis=2) == 1)


def test_channel_counts_binomial():
    m = gen_one_hot_mask(64, 64, 8, seed=0)
    counts = m.bits.sum(axis=(0, 1)).astype(np.int64)
    sd = np.sqrt(4096 * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - 512) <= 4 * sd), counts


def test_random_binary_degenerate():
    assert np.all(gen_random_binary_mask(4, 4, 3, 0.0, 7).bits == 0)
    assert np.all(gen_random_binary_mask(4, 4, 3, 1.0, 7).bits == 1)


def test_random_binary_mean():
    m = gen_random_binary_mask(64, 64, 8, 0.5, seed=0)
    n = m.bits.size
    assert abs(m.bits.mean() - 0.5) <= 4 * np.sqrt(0.25 / n)


def test_random_binary_rejects_p():
    with pytest.raises(ValueError):
        gen_random_binary_mask(2, 2, 2, 1.5, 0)


def test_zero_dimension_rejected():
    with pytest.raises(ValueError):
        gen_one_hot_mask(0, 2, 2, 0)


def test_complement():
    m = gen_one_hot_mask(5, 6, 4, 3)
    c = complement_mask(m)
    assert c.kind is MaskKind.RANDOM_BINARY
    assert np.all(c.bits.sum(axis=2) == 3)
    assert np.array_equal(complement_mask(c).bits, m.bits)
    ones = Mask(np.ones((2, 2, 3)))
    assert np.all(complement_mask(ones).bits == 0)


def test_validate_rejects():
    assert not validate_one_hot(Mask(np.zeros((3, 3, 2))))
    # Seed 0 at 64x64x8 is known to violate; checked once here.
    assert not validate_one_hot(gen_random_binary_mask(64, 64, 8, 0.5, 0))


def test_one_hot_kind_checked():
    with pytest.raises(ValueError):
        Mask(np.zeros((2, 2, 2)), MaskKind.ONE_HOT)


def test_seed_determinism():
    a = gen_one_hot_mask(16, 16, 8, 42)
    b = gen_one_hot_mask(16, 16, 8, 42)
    c = gen_one_hot_mask(16, 16, 8, 43)
    assert a == b
    assert not np.array_equal(a.bits, c.bits)


def test_counter_based_independent_of_extent():
    # A pixel's draw depends only on (seed, h, w), not on the mask size.
    small = gen_one_hot_mask(4, 4, 8, 9)
    big = gen_one_hot_mask(32, 20, 8, 9)
    assert np.array_equal(small.bits, big.bits[:4, :4])


def test_pinned_values():
    # Frozen outputs keep masks bit-stable across releases and platforms.
    assert int(hash_u64(0, 0, 0, 0)) == 1988231725936944407
    assert int(hash_u64(123, 4, 5, 6)) == 15958362581405139761
    assert gen_one_hot_mask(1, 8, 8, 0).bits.argmax(axis=2).tolist() == [[0, 3, 5, 5, 1, 4, 4, 7]]
    assert gen_random_binary_mask(2, 2, 2, 0.5, 0).bits.ravel().tolist() == [1, 0, 1, 1, 1, 1, 0, 0]
    vals = uniform01(0, np.arange(1000), 0, 0)
    assert np.all((vals >= 0) & (vals < 1))


def test_save_load_with_sidecar(tmp_path):
    m = gen_one_hot_mask(4, 5, 3, 1)
    save_mask(m, tmp_path / "m.ohsc", seed=1)
    meta = (tmp_path / "m.ohsc.meta").read_text()
    assert "kind=one_hot" in meta
    assert load_mask(tmp_path / "m.ohsc") == m
