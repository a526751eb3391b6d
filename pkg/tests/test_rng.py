"""
Tests for the deterministic random streams.
"""

import math

import numpy as np
import pytest

from services.rng import (
    MASK64,
    RngState,
    bits_to_uniform,
    box_muller,
    mix64,
    next_complex_gaussian,
    next_gaussian,
    next_uniform,
    seed_from,
    splitmix64,
)


class TestSplitmix:
    """Test the seeding recurrence."""

    def test_first_output_from_zero_seed(self):
        """Test the published first splitmix64 output for seed 0."""
        _, output = splitmix64(0)
        assert output == 0xE220A8397B1DCDAF

    def test_mix64_maps_zero_to_zero(self):
        assert mix64(0) == 0

    def test_stream_zero_uses_master_seed_directly(self):
        """Test stream 0 is offset by mix64(0) = 0, so s0 is the splitmix output of the seed."""
        state = seed_from(0, 0)
        assert state.s0 == 0xE220A8397B1DCDAF

    def test_seed_from_is_deterministic(self):
        assert seed_from(12345, 0) == seed_from(12345, 0)

    def test_distinct_streams_differ(self):
        assert seed_from(12345, 0) != seed_from(12345, 1)

    def test_seed_out_of_range(self):
        with pytest.raises(ValueError, match="64-bit"):
            seed_from(MASK64 + 1, 0)
        with pytest.raises(ValueError, match="64-bit"):
            seed_from(0, -1)

    def test_all_zero_state_is_replaced(self):
        state = RngState(0, 0, 0, 0)
        assert any(state.words())

    def test_copy_is_independent(self):
        state = seed_from(7, 3)
        clone = state.copy()
        first = state.next_u64()
        assert clone.next_u64() == first
        assert state == clone


class TestUniform:
    """Test the [0, 1) mapping."""

    def test_bits_zero(self):
        assert bits_to_uniform(0) == 0.0

    def test_bits_max_below_one(self):
        value = bits_to_uniform(2**53 - 1)
        assert value == (2**53 - 1) / 2**53
        assert value < 1.0

    def test_stream_is_not_constant(self):
        state = seed_from(99, 0)
        draws = [next_uniform(state) for _ in range(10_000)]
        assert len(set(draws)) > 9_990
        assert min(draws) >= 0.0
        assert max(draws) < 1.0

    def test_identical_streams_match_bit_for_bit(self):
        a, b = seed_from(2024, 17), seed_from(2024, 17)
        assert [next_uniform(a) for _ in range(100)] == [next_uniform(b) for _ in range(100)]


class TestGaussian:
    """Test Box-Muller draws."""

    def test_cosine_zero(self):
        assert box_muller(0.5, 0.25) == pytest.approx(0.0, abs=1e-15)

    def test_half_half(self):
        assert box_muller(0.5, 0.5) == pytest.approx(-math.sqrt(2.0 * math.log(2.0)), abs=1e-12)
        assert box_muller(0.5, 0.5) == pytest.approx(-1.17741, abs=1e-5)

    def test_zero_u1_is_finite(self):
        assert math.isfinite(box_muller(0.0, 0.0))

    def test_consumes_two_uniforms(self):
        state = seed_from(5, 5)
        peek = state.copy()
        u1, u2 = next_uniform(peek), next_uniform(peek)
        assert next_gaussian(state) == box_muller(u1, u2)
        assert state == peek

    def test_sample_moments(self):
        state = seed_from(1, 0)
        draws = np.array([next_gaussian(state) for _ in range(100_000)])
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.03


class TestComplexGaussian:
    """Test circularly symmetric complex normal draws."""

    def test_unit_variance(self):
        state = seed_from(3, 0)
        draws = np.array([next_complex_gaussian(state, 1.0) for _ in range(100_000)])
        assert abs(np.mean(np.abs(draws) ** 2) - 1.0) < 0.02

    def test_variance_scales(self):
        a, b = seed_from(3, 0), seed_from(3, 0)
        z1 = next_complex_gaussian(a, 1.0)
        z4 = next_complex_gaussian(b, 4.0)
        assert z4 == pytest.approx(2.0 * z1, abs=1e-12)

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError, match="variance must be positive"):
            next_complex_gaussian(seed_from(0, 0), 0.0)

    def test_streams_are_uncorrelated(self):
        a, b = seed_from(11, 0), seed_from(11, 1)
        xa = np.array([next_complex_gaussian(a, 1.0).real for _ in range(100_000)])
        xb = np.array([next_complex_gaussian(b, 1.0).real for _ in range(100_000)])
        assert abs(np.corrcoef(xa, xb)[0, 1]) < 0.02
