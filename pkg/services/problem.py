"""
Link scheduling problem: per-beam rates, weighted sum rate, constraint residuals,
the Lagrangian relaxation loss and conversion between continuous policies and
feasible binary schedules.

Array helpers (prefixed ``batch_``) accept any number of leading batch axes:
rho (..., N, Nr, N, Nt), phi (..., N, Nr), psi (..., N, Nt).
"""

import math
from typing import Dict, Tuple

import numpy as np

from src.models import (
    BeamPolicy,
    BinarySelection,
    DualMultipliers,
    EffectiveGains,
    SimConfig,
    ViolationReport,
)

LN2 = math.log(2.0)


def split_gains(rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Separate direct-link gains from cross-link gains.

    Returns:
        (direct (..., N, Nr, Nt), cross (..., N, Nr, N, Nt) with n == m zeroed)
    """
    n = rho.shape[-4]
    direct = np.einsum("...mrmt->...mrt", rho)
    off_diag = (1.0 - np.eye(n))[:, None, :, None]
    return direct, rho * off_diag


def _rate_parts(rho, phi, psi, tx_power, noise_power):
    direct, cross = split_gains(rho)
    coupled = np.einsum("...mrnl,...nl->...mr", cross, psi)
    interference = tx_power * phi * coupled
    signal = tx_power * phi[..., :, :, None] * psi[..., :, None, :] * direct
    return direct, cross, coupled, interference, signal


def batch_rates(rho: np.ndarray, phi: np.ndarray, psi: np.ndarray,
                tx_power: float, noise_power: float) -> np.ndarray:
    """All pair rates R[..., m, r, t] in bits/s/Hz."""
    _, _, _, interference, signal = _rate_parts(rho, phi, psi, tx_power, noise_power)
    denom = interference[..., None] + noise_power
    return np.log2(1.0 + signal / denom)


def batch_weighted_sum_rate(rho, phi, psi, tx_power, noise_power, weights) -> np.ndarray:
    rates = batch_rates(rho, phi, psi, tx_power, noise_power)
    return np.einsum("...mrt,m->...", rates, weights)


def batch_violation_terms(phi: np.ndarray, psi: np.ndarray) -> Dict[str, np.ndarray]:
    """Residual arrays keyed like ViolationReport fields."""
    sum_tx = psi.sum(axis=-1)
    sum_rx = phi.sum(axis=-1)
    return {
        "binary_tx": psi - psi ** 2,
        "binary_rx": phi - phi ** 2,
        "row_tx": np.maximum(0.0, sum_tx - 1.0),
        "row_rx": np.maximum(0.0, sum_rx - 1.0),
        "coupling": np.abs(sum_tx - sum_rx),
    }


def batch_penalty(phi: np.ndarray, psi: np.ndarray, duals: DualMultipliers) -> np.ndarray:
    terms = batch_violation_terms(phi, psi)
    return (
        np.sum(duals.lam * terms["binary_tx"], axis=(-2, -1))
        + np.sum(duals.mu * terms["binary_rx"], axis=(-2, -1))
        + np.sum(duals.nu * terms["row_tx"], axis=-1)
        + np.sum(duals.xi * terms["row_rx"], axis=-1)
        + np.sum(duals.rho_dual * terms["coupling"], axis=-1)
    )


def batch_loss_and_policy_grad(
    rho: np.ndarray,
    phi: np.ndarray,
    psi: np.ndarray,
    duals: DualMultipliers,
    tx_power: float,
    noise_power: float,
    weights: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Lagrangian loss per sample and its exact derivative w.r.t. the policy.

    Kinks use zero subgradients: the row penalty at sum == 1 and the coupling
    penalty at equal sums contribute nothing.

    Returns:
        (loss (...,), dloss/dphi (..., N, Nr), dloss/dpsi (..., N, Nt))
    """
    direct, cross, coupled, interference, signal = _rate_parts(rho, phi, psi, tx_power, noise_power)
    denom = interference[..., None] + noise_power  # D
    total = signal + denom  # S + D
    rates = np.log2(1.0 + signal / denom)
    wsr = np.einsum("...mrt,m->...", rates, weights)

    w = weights[:, None, None]
    a_signal = w / (total * LN2)
    a_interf = w * signal / (denom * total * LN2)
    a_interf_row = a_interf.sum(axis=-1)  # (..., N, Nr)

    # d(WSR)/d(phi), d(WSR)/d(psi)
    d_phi = (
        tx_power * np.einsum("...mrt,...mt,...mrt->...mr", a_signal, psi, direct)
        - tx_power * a_interf_row * coupled
    )
    d_psi = (
        tx_power * np.einsum("...mrt,...mr,...mrt->...mt", a_signal, phi, direct)
        - tx_power * np.einsum("...mr,...mr,...mrnl->...nl", a_interf_row, phi, cross)
    )
    d_phi = -d_phi
    d_psi = -d_psi

    sum_tx = psi.sum(axis=-1)
    sum_rx = phi.sum(axis=-1)
    d_psi = d_psi + duals.lam * (1.0 - 2.0 * psi)
    d_phi = d_phi + duals.mu * (1.0 - 2.0 * phi)
    d_psi = d_psi + (duals.nu * (sum_tx > 1.0))[..., None]
    d_phi = d_phi + (duals.xi * (sum_rx > 1.0))[..., None]
    sign = np.sign(sum_tx - sum_rx)
    d_psi = d_psi + (duals.rho_dual * sign)[..., None]
    d_phi = d_phi - (duals.rho_dual * sign)[..., None]

    loss = -wsr + batch_penalty(phi, psi, duals)
    return loss, d_phi, d_psi


def _check_policy(gains: EffectiveGains, policy: BeamPolicy) -> None:
    n, nr, _, nt = gains.rho.shape
    if policy.phi.shape != (n, nr) or policy.psi.shape != (n, nt):
        raise ValueError(
            f"Policy shapes {policy.phi.shape}/{policy.psi.shape} do not match gains "
            f"(N={n}, Nr={nr}, Nt={nt})"
        )


def pair_rate(gains: EffectiveGains, policy: BeamPolicy, config: SimConfig,
              m: int, r: int, t: int) -> float:
    """
    Rate of pair m on receive beam r and transmit beam t.

    log2(1 + phi[m,r] psi[m,t] p rho[m,r,m,t] /
         (sum_{n != m, l} phi[m,r] psi[n,l] p rho[m,r,n,l] + sigma^2))
    """
    _check_policy(gains, policy)
    rates = batch_rates(gains.rho, policy.phi, policy.psi, config.tx_power, config.noise_power)
    return float(rates[m, r, t])


def weighted_sum_rate(gains: EffectiveGains, policy: BeamPolicy, config: SimConfig) -> float:
    """Sum over pairs and beam combinations of w_m * pair_rate."""
    _check_policy(gains, policy)
    return float(batch_weighted_sum_rate(
        gains.rho, policy.phi, policy.psi, config.tx_power, config.noise_power, config.weight_vector()
    ))


def violations(policy: BeamPolicy) -> ViolationReport:
    """Constraint residuals of a box policy."""
    return ViolationReport(**batch_violation_terms(policy.phi, policy.psi))


def lagrangian_loss(gains: EffectiveGains, policy: BeamPolicy, duals: DualMultipliers,
                    config: SimConfig) -> float:
    """-WSR plus the multiplier-weighted constraint residuals."""
    _check_policy(gains, policy)
    wsr = weighted_sum_rate(gains, policy, config)
    return float(-wsr + batch_penalty(policy.phi, policy.psi, duals))


def round_policy(policy: BeamPolicy, threshold: float = 0.5) -> BinarySelection:
    """
    Turn a continuous policy into a feasible schedule.

    Each pair keeps its strongest receive and transmit beams (lowest index on
    ties) and is activated only when both selections reach ``threshold``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"Rounding threshold must lie in (0, 1], got {threshold}")
    best_rx = np.argmax(policy.phi, axis=1)
    best_tx = np.argmax(policy.psi, axis=1)
    beams = []
    for m in range(policy.phi.shape[0]):
        r, t = int(best_rx[m]), int(best_tx[m])
        if min(policy.phi[m, r], policy.psi[m, t]) >= threshold:
            beams.append((r, t))
        else:
            beams.append(None)
    return BinarySelection(beams=beams)


def selection_to_policy(sel: BinarySelection, n_rx: int, n_tx: int) -> BeamPolicy:
    """One-hot rows for active pairs, zero rows for inactive ones."""
    n = len(sel.beams)
    phi = np.zeros((n, n_rx))
    psi = np.zeros((n, n_tx))
    for m, beam in enumerate(sel.beams):
        if beam is None:
            continue
        r, t = beam
        if not (0 <= r < n_rx and 0 <= t < n_tx):
            raise ValueError(f"Beam index ({r}, {t}) of pair {m} out of range for Nr={n_rx}, Nt={n_tx}")
        phi[m, r] = 1.0
        psi[m, t] = 1.0
    return BeamPolicy(phi=phi, psi=psi)


def selection_wsr(gains: EffectiveGains, sel: BinarySelection, config: SimConfig) -> float:
    """Weighted sum rate of a binary schedule."""
    _, nr, _, nt = gains.rho.shape
    policy = selection_to_policy(sel, nr, nt)
    return float(batch_weighted_sum_rate(
        gains.rho, policy.phi, policy.psi, config.tx_power, config.noise_power, config.weight_vector()
    ))


def batch_round(phi: np.ndarray, psi: np.ndarray, threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized round_policy returning the one-hot/zero policy arrays."""
    best_rx = np.argmax(phi, axis=-1)[..., None]
    best_tx = np.argmax(psi, axis=-1)[..., None]
    top = np.minimum(np.take_along_axis(phi, best_rx, axis=-1), np.take_along_axis(psi, best_tx, axis=-1))
    active = (top >= threshold).astype(float)
    binary_phi = np.zeros_like(phi)
    binary_psi = np.zeros_like(psi)
    np.put_along_axis(binary_phi, best_rx, active, axis=-1)
    np.put_along_axis(binary_psi, best_tx, active, axis=-1)
    return binary_phi, binary_psi
