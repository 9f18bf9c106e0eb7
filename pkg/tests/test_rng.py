import numpy as np
from hypothesis import given, strategies as st

from moeplan.rng import MASK64, SplitMix64, below_array, u64_stream


def test_reference_vector_seed_zero():
    # published SplitMix64 outputs for seed 0
    rng = SplitMix64(0)
    assert [rng.next_u64() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


@given(st.integers(0, MASK64), st.integers(0, 50), st.integers(1, 40))
def test_vector_stream_matches_scalar(seed, start, count):
    rng = SplitMix64(seed)
    for _ in range(start):
        rng.next_u64()
    scalar = [rng.next_u64() for _ in range(count)]
    assert u64_stream(seed, start, count).tolist() == scalar


@given(st.integers(0, MASK64), st.integers(1, 2048))
def test_below_agrees_and_is_bounded(seed, bound):
    draws = u64_stream(seed, 0, 16)
    vec = below_array(draws, bound).tolist()
    rng = SplitMix64(seed)
    assert vec == [rng.below(bound) for _ in range(16)]
    assert all(0 <= v < bound for v in vec)


def test_shuffle_is_a_permutation_and_reproducible():
    a, b = list(range(100)), list(range(100))
    SplitMix64(7).shuffle(a)
    SplitMix64(7).shuffle(b)
    assert a == b and sorted(a) == list(range(100)) and a != list(range(100))


def test_below_is_roughly_uniform():
    counts = np.bincount(below_array(u64_stream(3, 0, 80_000), 8).astype(int), minlength=8)
    assert np.all(np.abs(counts / 80_000 - 1 / 8) < 0.005)
