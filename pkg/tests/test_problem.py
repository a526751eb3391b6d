"""
Tests for rates, constraint residuals, the Lagrangian loss and rounding.
"""

import math

import numpy as np
import pytest

from src.models import BeamPolicy, BinarySelection, DualMultipliers, EffectiveGains, SimConfig
from services.problem import (
    batch_loss_and_policy_grad,
    batch_round,
    lagrangian_loss,
    pair_rate,
    round_policy,
    selection_to_policy,
    selection_wsr,
    violations,
    weighted_sum_rate,
)


def make_config(n_pairs: int, n_ant: int, snr_db: float = 0.0, weights=None) -> SimConfig:
    return SimConfig(n_pairs=n_pairs, n_tx=n_ant, n_rx=n_ant, region_side=100.0, d1=5.0, d2=30.0,
                     snr_db=snr_db, weights=weights)


def scalar_rate(rho, phi, psi, p, sigma2, m, r, t) -> float:
    n_pairs, _, _, n_tx = rho.shape
    interference = 0.0
    for n in range(n_pairs):
        if n == m:
            continue
        for l in range(n_tx):
            interference += phi[m, r] * psi[n, l] * p * rho[m, r, n, l]
    signal = phi[m, r] * psi[m, t] * p * rho[m, r, m, t]
    return math.log2(1.0 + signal / (interference + sigma2))


def random_duals(rng, n, nt, nr) -> DualMultipliers:
    return DualMultipliers(lam=rng.uniform(0, 1, (n, nt)), mu=rng.uniform(0, 1, (n, nr)),
                           nu=rng.uniform(0, 1, n), xi=rng.uniform(0, 1, n), rho_dual=rng.uniform(0, 1, n))


class TestRates:
    """Test pair rates and the weighted sum rate."""

    def test_zero_receive_selection(self):
        cfg = make_config(2, 2)
        gains = EffectiveGains(rho=np.ones((2, 2, 2, 2)))
        policy = BeamPolicy(phi=np.zeros((2, 2)), psi=np.ones((2, 2)))
        assert pair_rate(gains, policy, cfg, 0, 1, 1) == 0.0

    def test_single_pair(self):
        cfg = make_config(1, 1, snr_db=10.0)
        gains = EffectiveGains(rho=np.full((1, 1, 1, 1), 0.3))
        policy = BeamPolicy(phi=np.ones((1, 1)), psi=np.ones((1, 1)))
        assert pair_rate(gains, policy, cfg, 0, 0, 0) == pytest.approx(math.log2(1.0 + 10.0 * 0.3), abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 5))
            k = int(rng.integers(1, 5))
            cfg = make_config(n, k, snr_db=float(rng.uniform(-10, 20)))
            rho = rng.uniform(0, 1, (n, k, n, k))
            phi = rng.integers(0, 2, (n, k)).astype(float)
            psi = rng.integers(0, 2, (n, k)).astype(float)
            gains, policy = EffectiveGains(rho=rho), BeamPolicy(phi=phi, psi=psi)
            m, r, t = int(rng.integers(n)), int(rng.integers(k)), int(rng.integers(k))
            expected = scalar_rate(rho, phi, psi, cfg.tx_power, cfg.noise_power, m, r, t)
            assert pair_rate(gains, policy, cfg, m, r, t) == pytest.approx(expected, abs=1e-12)

    def test_zero_policy_zero_wsr(self):
        cfg = make_config(3, 2)
        gains = EffectiveGains(rho=np.ones((3, 2, 3, 2)))
        policy = BeamPolicy(phi=np.zeros((3, 2)), psi=np.zeros((3, 2)))
        assert weighted_sum_rate(gains, policy, cfg) == 0.0

    def test_zero_weights(self):
        cfg = make_config(2, 2, weights=[0.0, 0.0])
        gains = EffectiveGains(rho=np.ones((2, 2, 2, 2)))
        policy = BeamPolicy(phi=np.full((2, 2), 0.5), psi=np.full((2, 2), 0.5))
        assert weighted_sum_rate(gains, policy, cfg) == 0.0

    def test_binary_selection_sums_active_rates(self):
        rng = np.random.default_rng(1)
        cfg = make_config(3, 2, snr_db=5.0)
        gains = EffectiveGains(rho=rng.uniform(0, 1, (3, 2, 3, 2)))
        sel = BinarySelection(beams=[(0, 1), None, (1, 0)])
        policy = selection_to_policy(sel, 2, 2)
        expected = pair_rate(gains, policy, cfg, 0, 0, 1) + pair_rate(gains, policy, cfg, 2, 1, 0)
        assert weighted_sum_rate(gains, policy, cfg) == pytest.approx(expected, abs=1e-12)
        assert selection_wsr(gains, sel, cfg) == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        cfg = make_config(2, 2)
        gains = EffectiveGains(rho=np.ones((2, 2, 2, 2)))
        policy = BeamPolicy(phi=np.zeros((2, 3)), psi=np.zeros((2, 2)))
        with pytest.raises(ValueError, match="do not match"):
            weighted_sum_rate(gains, policy, cfg)


class TestViolations:
    """Test constraint residuals."""

    def test_feasible_point(self):
        policy = selection_to_policy(BinarySelection(beams=[(1, 0), None]), 2, 2)
        report = violations(policy)
        assert all(value == 0.0 for value in report.means().values())

    def test_half_row(self):
        report = violations(BeamPolicy(phi=np.array([[0.5, 0.5]]), psi=np.zeros((1, 2))))
        assert np.allclose(report.binary_rx, 0.25)
        assert report.row_rx[0] == 0.0

    def test_coupling(self):
        report = violations(BeamPolicy(phi=np.zeros((1, 2)), psi=np.array([[1.0, 0.0]])))
        assert report.coupling[0] == 1.0

    def test_row_excess(self):
        report = violations(BeamPolicy(phi=np.array([[0.8, 0.7]]), psi=np.array([[0.9, 0.6]])))
        assert report.row_rx[0] == pytest.approx(0.5)
        assert report.row_tx[0] == pytest.approx(0.5)


class TestLagrangianLoss:
    """Test the relaxed loss."""

    def test_feasible_binary_policy(self):
        rng = np.random.default_rng(2)
        cfg = make_config(2, 2)
        gains = EffectiveGains(rho=rng.uniform(0, 1, (2, 2, 2, 2)))
        policy = selection_to_policy(BinarySelection(beams=[(0, 0), (1, 1)]), 2, 2)
        loss = lagrangian_loss(gains, policy, random_duals(rng, 2, 2, 2), cfg)
        assert loss == -weighted_sum_rate(gains, policy, cfg)

    def test_zero_duals(self):
        rng = np.random.default_rng(3)
        cfg = make_config(2, 2)
        gains = EffectiveGains(rho=rng.uniform(0, 1, (2, 2, 2, 2)))
        policy = BeamPolicy(phi=rng.uniform(0, 1, (2, 2)), psi=rng.uniform(0, 1, (2, 2)))
        loss = lagrangian_loss(gains, policy, DualMultipliers.zeros(2, 2, 2), cfg)
        assert loss == pytest.approx(-weighted_sum_rate(gains, policy, cfg), abs=1e-12)

    def test_penalties_nonnegative(self):
        rng = np.random.default_rng(4)
        cfg = make_config(3, 2)
        for _ in range(50):
            gains = EffectiveGains(rho=rng.uniform(0, 1, (3, 2, 3, 2)))
            policy = BeamPolicy(phi=rng.uniform(0, 1, (3, 2)), psi=rng.uniform(0, 1, (3, 2)))
            loss = lagrangian_loss(gains, policy, random_duals(rng, 3, 2, 2), cfg)
            assert loss >= -weighted_sum_rate(gains, policy, cfg) - 1e-12

    @pytest.mark.parametrize("low,high", [(0.05, 0.4), (0.6, 0.95)])
    def test_policy_gradient_matches_differences(self, low, high):
        """Test the analytic policy derivative away from the row and coupling kinks."""
        rng = np.random.default_rng(5)
        cfg = make_config(3, 2, snr_db=10.0)
        rho = rng.uniform(0, 1, (3, 2, 3, 2))
        phi = rng.uniform(low, high, (3, 2))
        psi = rng.uniform(low, high, (3, 2))
        duals = random_duals(rng, 3, 2, 2)
        w = cfg.weight_vector()
        _, d_phi, d_psi = batch_loss_and_policy_grad(rho, phi, psi, duals, cfg.tx_power, cfg.noise_power, w)
        h = 1e-6
        for arr, grad in ((phi, d_phi), (psi, d_psi)):
            for idx in np.ndindex(arr.shape):
                saved = arr[idx]
                arr[idx] = saved + h
                plus, _, _ = batch_loss_and_policy_grad(rho, phi, psi, duals, cfg.tx_power, cfg.noise_power, w)
                arr[idx] = saved - h
                minus, _, _ = batch_loss_and_policy_grad(rho, phi, psi, duals, cfg.tx_power, cfg.noise_power, w)
                arr[idx] = saved
                assert grad[idx] == pytest.approx((plus - minus) / (2 * h), rel=1e-5, abs=1e-7)


class TestRounding:
    """Test policy rounding and selection conversion."""

    def test_clear_maxima(self):
        policy = BeamPolicy(phi=np.array([[0.9, 0.1]]), psi=np.array([[0.2, 0.8]]))
        assert round_policy(policy).beams == [(0, 1)]

    def test_below_threshold(self):
        policy = BeamPolicy(phi=np.array([[0.9, 0.1]]), psi=np.array([[0.3, 0.2]]))
        assert round_policy(policy, 0.5).beams == [None]

    def test_tie_breaks_to_lowest_index(self):
        policy = BeamPolicy(phi=np.array([[0.7, 0.7]]), psi=np.array([[0.1, 0.9]]))
        assert round_policy(policy).beams == [(0, 1)]

    def test_invalid_threshold(self):
        policy = BeamPolicy(phi=np.zeros((1, 1)), psi=np.zeros((1, 1)))
        with pytest.raises(ValueError, match="Rounding threshold"):
            round_policy(policy, 0.0)

    def test_rounded_output_is_feasible(self):
        rng = np.random.default_rng(6)
        policy = BeamPolicy(phi=rng.uniform(0, 1, (5, 3)), psi=rng.uniform(0, 1, (5, 4)))
        report = violations(selection_to_policy(round_policy(policy), 3, 4))
        assert all(value == 0.0 for value in report.means().values())

    def test_batch_round_matches_scalar(self):
        rng = np.random.default_rng(7)
        phi = rng.uniform(0, 1, (6, 4, 3))
        psi = rng.uniform(0, 1, (6, 4, 2))
        binary_phi, binary_psi = batch_round(phi, psi, 0.5)
        for b in range(6):
            expected = selection_to_policy(round_policy(BeamPolicy(phi=phi[b], psi=psi[b]), 0.5), 3, 2)
            assert np.array_equal(binary_phi[b], expected.phi)
            assert np.array_equal(binary_psi[b], expected.psi)

    def test_inactive_pair_zero_rows(self):
        policy = selection_to_policy(BinarySelection(beams=[None]), 2, 2)
        assert not policy.phi.any() and not policy.psi.any()

    def test_active_pair_one_hot(self):
        policy = selection_to_policy(BinarySelection(beams=[(1, 0)]), 2, 2)
        assert policy.phi.tolist() == [[0.0, 1.0]]
        assert policy.psi.tolist() == [[1.0, 0.0]]

    def test_out_of_range_index(self):
        with pytest.raises(ValueError, match="out of range"):
            selection_to_policy(BinarySelection(beams=[(2, 0)]), 2, 2)

    def test_selection_roundtrip(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            beams = [None if rng.uniform() < 0.3 else (int(rng.integers(3)), int(rng.integers(4)))
                     for _ in range(4)]
            sel = BinarySelection(beams=beams)
            assert round_policy(selection_to_policy(sel, 3, 4)) == sel
