import numpy as np
import pytest
from scipy import stats

from rtegrad.core.errors import ConfigurationError
from rtegrad.core.rng import (
    INITIAL_DRAWS,
    MasterSeed,
    derive_stream,
    particle_keys,
    step_counter,
    uniform01,
    uniform_block,
)


def _draws(stream, count):
    return np.array([uniform01(stream) for _ in range(count)])


def test_same_seed_and_particle_replay():
    """Test the same seed and particle replay the same draws"""
    first = _draws(derive_stream(2024, 17), 1000)
    second = _draws(derive_stream(2024, 17), 1000)
    np.testing.assert_array_equal(first, second)


def test_distinct_particles_differ():
    """Test distinct particles or seeds give distinct streams"""
    a = _draws(derive_stream(2024, 0), 1000)
    b = _draws(derive_stream(2024, 1), 1000)
    assert not np.array_equal(a, b)
    c = _draws(derive_stream(2025, 0), 1000)
    assert not np.array_equal(a, c)


def test_values_in_unit_interval():
    """Test every draw lies in [0, 1)"""
    keys = particle_keys(3, np.arange(10_000))
    for counter in range(5):
        u = uniform_block(keys, counter)
        assert u.min() >= 0.0
        assert u.max() < 1.0


def test_sequential_and_block_views_agree():
    """Test stream draws equal the vectorized block draws"""
    stream = derive_stream(99, 5)
    keys = particle_keys(99, np.array([4, 5, 6]))
    for counter in range(8):
        assert uniform01(stream) == uniform_block(keys, counter)[1]


def test_stream_positioning():
    """Test moving a stream to a step counter leaves the original alone"""
    stream = derive_stream(11, 3)
    moved = stream.at(step_counter(2))
    assert moved.counter == INITIAL_DRAWS + 4
    expected = uniform_block(particle_keys(11, np.array([3])), INITIAL_DRAWS + 4)[0]
    assert moved.uniform01() == expected
    # the original stream is untouched
    assert stream.counter == 0


def test_pooled_mean():
    """Test the pooled mean of a million draws is close to 1/2"""
    keys = particle_keys(12345, np.arange(1000))
    pooled = np.concatenate([uniform_block(keys, k) for k in range(1000)])
    assert pooled.size == 1_000_000
    assert abs(pooled.mean() - 0.5) < 0.002


def test_chi_square_uniformity():
    """Test draws pass a chi-square uniformity check across seeds"""
    failures = 0
    for seed in range(20):
        keys = particle_keys(seed, np.arange(1000))
        draws = np.concatenate([uniform_block(keys, k) for k in range(100)])
        counts, _ = np.histogram(draws, bins=100, range=(0.0, 1.0))
        if stats.chisquare(counts).pvalue <= 0.001:
            failures += 1
    assert failures <= 1


def test_ks_against_uniform():
    """Test draws pass a Kolmogorov-Smirnov uniformity check"""
    draws = uniform_block(particle_keys(77, np.arange(100_000)), 9)
    assert stats.kstest(draws, "uniform").pvalue > 1e-4


def test_seed_validation():
    """Test seeds must fit in an unsigned 64-bit integer"""
    MasterSeed(0)
    MasterSeed((1 << 64) - 1)
    with pytest.raises(ConfigurationError):
        MasterSeed(-1)
    with pytest.raises(ConfigurationError):
        MasterSeed(1 << 64)
    with pytest.raises(ConfigurationError):
        derive_stream(1, -3)
