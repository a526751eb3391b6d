"""
Tests for topology, channel, codebook and gain generation.
"""

import math

import numpy as np
import pytest

from src.models import ChannelSet, Codebook, NetworkTopology, SimConfig
from services.channel import (
    dft_codebook,
    effective_gains,
    gen_channels,
    gen_topology,
    generate_sample,
    make_codebook,
    ula_steering,
)
from services.graph_features import build_features
from services.rng import next_complex_gaussian, seed_from


def make_config(**overrides) -> SimConfig:
    values = dict(n_pairs=3, n_tx=4, n_rx=2, region_side=100.0, d1=5.0, d2=30.0, snr_db=0.0)
    values.update(overrides)
    return SimConfig(**values)


class TestSimConfig:
    """Test scenario validation."""

    def test_power_derived_from_snr(self):
        cfg = make_config(snr_db=10.0)
        assert cfg.tx_power == pytest.approx(10.0)
        assert cfg.weights == [1.0, 1.0, 1.0]

    def test_inconsistent_power_rejected(self):
        with pytest.raises(ValueError, match="disagrees"):
            make_config(snr_db=10.0, tx_power=2.0)

    def test_d1_above_d2_rejected(self):
        with pytest.raises(ValueError, match="must not exceed"):
            make_config(d1=40.0, d2=30.0)

    def test_wrong_weight_count_rejected(self):
        with pytest.raises(ValueError, match="Expected 3 weights"):
            make_config(weights=[1.0, 2.0])


class TestTopology:
    """Test pair placement."""

    def test_fixed_distance(self):
        cfg = make_config(n_pairs=5, d1=10.0, d2=10.0)
        topology = gen_topology(cfg, seed_from(1, 0))
        assert np.allclose(np.diag(topology.dist), 10.0, atol=1e-9)

    def test_distance_matrix_matches_positions(self):
        cfg = make_config(n_pairs=4)
        topology = gen_topology(cfg, seed_from(2, 0))
        for m in range(4):
            for n in range(4):
                expected = np.linalg.norm(topology.rx_pos[m] - topology.tx_pos[n])
                assert topology.dist[m, n] == pytest.approx(expected, abs=1e-12)

    def test_transmitters_inside_region(self):
        cfg = make_config(n_pairs=20, region_side=50.0)
        topology = gen_topology(cfg, seed_from(3, 0))
        assert np.all(topology.tx_pos >= 0.0)
        assert np.all(topology.tx_pos < 50.0)
        assert np.all(np.diag(topology.dist) >= 5.0 - 1e-9)
        assert np.all(np.diag(topology.dist) <= 30.0 + 1e-9)

    def test_mean_pair_distance(self):
        cfg = make_config(n_pairs=10)
        rng = seed_from(4, 0)
        distances = np.concatenate([np.diag(gen_topology(cfg, rng).dist) for _ in range(1000)])
        assert distances.mean() == pytest.approx(17.5, rel=0.02)


class TestSteering:
    """Test the ULA response."""

    def test_broadside(self):
        assert np.allclose(ula_steering(0.0, 2), np.array([1, 1]) / math.sqrt(2), atol=1e-15)

    def test_endfire(self):
        assert np.allclose(ula_steering(math.pi / 2, 2), np.array([1, -1]) / math.sqrt(2), atol=1e-12)

    def test_single_element(self):
        assert np.allclose(ula_steering(1.234, 1), [1.0])

    @pytest.mark.parametrize("n_ant", [1, 2, 8, 16])
    def test_unit_norm(self, n_ant):
        assert abs(np.linalg.norm(ula_steering(0.7, n_ant)) - 1.0) <= 1e-12

    def test_invalid_count(self):
        with pytest.raises(ValueError, match="Antenna count"):
            ula_steering(0.0, 0)


class TestCodebook:
    """Test DFT codebooks."""

    def test_two_antennas(self):
        cb = dft_codebook(2)
        assert np.allclose(cb[:, 0], np.array([1, 1]) / math.sqrt(2), atol=1e-15)
        assert np.allclose(cb[:, 1], np.array([1, -1]) / math.sqrt(2), atol=1e-12)

    def test_one_antenna(self):
        assert np.allclose(dft_codebook(1), [[1.0]])

    @pytest.mark.parametrize("n_ant", [1, 2, 8, 16])
    def test_orthonormal(self, n_ant):
        cb = dft_codebook(n_ant)
        gram = cb.conj().T @ cb
        assert np.max(np.abs(gram - np.eye(n_ant))) <= 1e-12


class TestChannels:
    """Test clustered channel draws."""

    def _single_link(self, dist: float = 10.0) -> NetworkTopology:
        return NetworkTopology(tx_pos=np.zeros((1, 2)), rx_pos=np.array([[dist, 0.0]]), dist=np.array([[dist]]))

    def test_single_path_norm(self):
        cfg = make_config(n_pairs=1, n_paths=1, n_tx=4, n_rx=4)
        rng = seed_from(8, 0)
        alpha = next_complex_gaussian(rng.copy(), 1.0)
        H = gen_channels(self._single_link(), cfg, rng).H[0, 0]
        expected = math.sqrt(10.0 ** -3 * 16) * abs(alpha)
        assert np.linalg.norm(H) == pytest.approx(expected, rel=1e-12)

    def test_rank_bounded_by_paths(self):
        cfg = make_config(n_pairs=2, n_paths=2, n_tx=8, n_rx=8)
        topology = gen_topology(cfg, seed_from(9, 0))
        H = gen_channels(topology, cfg, seed_from(9, 1)).H
        for m in range(2):
            for n in range(2):
                assert np.linalg.matrix_rank(H[m, n], tol=1e-12 * np.linalg.norm(H[m, n])) <= 2

    def test_mean_frobenius_power(self):
        cfg = make_config(n_pairs=1, n_paths=2, n_tx=2, n_rx=2)
        rng = seed_from(10, 0)
        topology = self._single_link()
        power = [np.linalg.norm(gen_channels(topology, cfg, rng).H[0, 0]) ** 2 for _ in range(100_000)]
        expected = 10.0 ** -3 * 2 * 2 * 2
        assert np.mean(power) == pytest.approx(expected, rel=0.02)

    def test_topology_shape_mismatch(self):
        cfg = make_config(n_pairs=2)
        with pytest.raises(ValueError, match="Topology has shape"):
            gen_channels(self._single_link(), cfg, seed_from(0, 0))


class TestEffectiveGains:
    """Test the beam-pair gain tensor."""

    def test_zero_channel(self):
        cfg = make_config(n_pairs=2, n_tx=2, n_rx=2)
        gains = effective_gains(ChannelSet(H=np.zeros((2, 2, 2, 2), dtype=complex)), make_codebook(cfg))
        assert np.all(gains.rho == 0.0)

    def test_matched_codewords(self):
        cfg = make_config(n_pairs=1, n_tx=4, n_rx=2)
        codebook = make_codebook(cfg)
        H = np.outer(codebook.v_r[:, 1], codebook.u_t[:, 3].conj())[None, None]
        gains = effective_gains(ChannelSet(H=H), codebook)
        assert gains.rho[0, 1, 0, 3] == pytest.approx(1.0, abs=1e-12)
        assert gains.rho.sum() == pytest.approx(1.0, abs=1e-12)

    def test_invariant_to_link_phase_rotation(self):
        cfg = make_config(n_pairs=3, n_tx=4, n_rx=2)
        _, channels, codebook = generate_sample(cfg, seed_from(13, 0))
        phases = np.exp(1j * np.random.default_rng(13).uniform(0.0, 2.0 * np.pi, (3, 3)))
        rotated = ChannelSet(H=channels.H * phases[:, :, None, None])
        before = effective_gains(channels, codebook).rho
        after = effective_gains(rotated, codebook).rho
        assert np.allclose(after, before, rtol=0.0, atol=1e-12 * before.max())

    def test_scalar_cross_check(self):
        cfg = make_config(n_pairs=2, n_tx=2, n_rx=2)
        topology, channels, codebook = generate_sample(cfg, seed_from(12, 0))
        rho = effective_gains(channels, codebook).rho
        for m in range(2):
            for n in range(2):
                for r in range(2):
                    for l in range(2):
                        value = np.vdot(codebook.v_r[:, r], channels.H[m, n] @ codebook.u_t[:, l])
                        assert rho[m, r, n, l] == pytest.approx(abs(value) ** 2, rel=1e-10, abs=1e-18)

    def test_codebook_mismatch(self):
        channels = ChannelSet(H=np.zeros((1, 1, 2, 2), dtype=complex))
        codebook = Codebook(u_t=dft_codebook(4), v_r=dft_codebook(2))
        with pytest.raises(ValueError, match="do not match"):
            effective_gains(channels, codebook)


class TestGraphFeatures:
    """Test vertex and edge features."""

    def test_zero_channel_zero_features(self):
        channels = ChannelSet(H=np.zeros((2, 2, 2, 2), dtype=complex))
        kappa = build_features(channels, make_codebook(make_config(n_pairs=2, n_tx=2, n_rx=2))).kappa
        assert kappa.shape == (2, 2, 4)
        assert np.all(kappa == 0.0)

    def test_features_match_gains(self):
        cfg = make_config(n_pairs=3, n_tx=4, n_rx=2)
        _, channels, codebook = generate_sample(cfg, seed_from(13, 0))
        kappa = build_features(channels, codebook).kappa
        rho = effective_gains(channels, codebook).rho
        for i in range(3):
            for j in range(3):
                for r in range(2):
                    for l in range(4):
                        assert kappa[i, j, r * 4 + l] ** 2 == pytest.approx(rho[i, r, j, l], rel=1e-10, abs=1e-20)
