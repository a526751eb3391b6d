"""
Channel generation: pair topologies, clustered Saleh-Valenzuela mmWave channels,
DFT beam codebooks and the effective beam-pair gain tensor.
"""

import logging
import math

import numpy as np

from src.models import ChannelSet, Codebook, EffectiveGains, NetworkTopology, SimConfig
from services.rng import RngState, next_complex_gaussian, next_uniform

logger = logging.getLogger(__name__)

PATHLOSS_EXPONENT = 3.0


def gen_topology(config: SimConfig, rng: RngState) -> NetworkTopology:
    """
    Drop N transmitters uniformly in the square region and place each receiver
    at a uniform distance in [d1, d2] and uniform bearing from its transmitter.

    Draw order: all transmitter (x, y) first, then per pair the distance and
    the bearing. Receivers are not clipped to the region.

    Args:
        config: Scenario configuration
        rng: Stream to draw from

    Returns:
        NetworkTopology with dist[m, n] = |rx_m - tx_n|
    """
    n = config.n_pairs
    tx_pos = np.zeros((n, 2))
    for m in range(n):
        tx_pos[m, 0] = config.region_side * next_uniform(rng)
        tx_pos[m, 1] = config.region_side * next_uniform(rng)

    rx_pos = np.zeros((n, 2))
    for m in range(n):
        d = config.d1 + (config.d2 - config.d1) * next_uniform(rng)
        beta = 2.0 * math.pi * next_uniform(rng)
        rx_pos[m, 0] = tx_pos[m, 0] + d * math.cos(beta)
        rx_pos[m, 1] = tx_pos[m, 1] + d * math.sin(beta)

    dist = np.linalg.norm(rx_pos[:, None, :] - tx_pos[None, :, :], axis=-1)
    return NetworkTopology(tx_pos=tx_pos, rx_pos=rx_pos, dist=dist)


def ula_steering(angle: float, n_ant: int) -> np.ndarray:
    """Unit-norm half-wavelength ULA response (1/sqrt(n)) exp(j pi k sin(angle))."""
    if n_ant < 1:
        raise ValueError(f"Antenna count must be >= 1, got {n_ant}")
    k = np.arange(n_ant)
    return np.exp(1j * math.pi * k * math.sin(angle)) / math.sqrt(n_ant)


def gen_channels(topology: NetworkTopology, config: SimConfig, rng: RngState) -> ChannelSet:
    """
    Draw H[m, n] = sqrt(rho Nt Nr) sum_p alpha_p h_r(tau_p) h_t(psi_p)^H for all pairs.

    rho = dist^-3; alpha ~ CN(0, 1); AoA tau and AoD psi uniform in [0, 2 pi).
    Draws run m-major, then n, then path, each path consuming (alpha, tau, psi).
    """
    n, nt, nr, n_paths = config.n_pairs, config.n_tx, config.n_rx, config.n_paths
    if topology.dist.shape != (n, n):
        raise ValueError(f"Topology has shape {topology.dist.shape}, config expects ({n}, {n})")

    H = np.zeros((n, n, nr, nt), dtype=np.complex128)
    for m in range(n):
        for j in range(n):
            pathloss = topology.dist[m, j] ** (-PATHLOSS_EXPONENT)
            acc = np.zeros((nr, nt), dtype=np.complex128)
            for _ in range(n_paths):
                alpha = next_complex_gaussian(rng, 1.0)
                aoa = 2.0 * math.pi * next_uniform(rng)
                aod = 2.0 * math.pi * next_uniform(rng)
                acc += alpha * np.outer(ula_steering(aoa, nr), ula_steering(aod, nt).conj())
            H[m, j] = math.sqrt(pathloss * nt * nr) * acc
    return ChannelSet(H=H)


def dft_codebook(n_ant: int) -> np.ndarray:
    """Square DFT matrix with entry (a, b) = exp(j 2 pi a b / n) / sqrt(n)."""
    if n_ant < 1:
        raise ValueError(f"Antenna count must be >= 1, got {n_ant}")
    a = np.arange(n_ant)
    return np.exp(2j * math.pi * np.outer(a, a) / n_ant) / math.sqrt(n_ant)


def make_codebook(config: SimConfig) -> Codebook:
    return Codebook(u_t=dft_codebook(config.n_tx), v_r=dft_codebook(config.n_rx))


def beamformed_channels(channels: ChannelSet, codebook: Codebook) -> np.ndarray:
    """
    V_r^H H[m, n] U_t for every pair of pairs.

    Returns:
        Complex array (N, N, Nr, Nt) indexed (m, n, r, l)

    Raises:
        ValueError: If codebook sizes disagree with the channel matrices
    """
    H = channels.H
    if H.ndim != 4:
        raise ValueError(f"Channel tensor must be 4-D (N, N, Nr, Nt), got shape {H.shape}")
    nr, nt = H.shape[2], H.shape[3]
    if codebook.v_r.shape != (nr, nr) or codebook.u_t.shape != (nt, nt):
        raise ValueError(
            f"Codebook shapes {codebook.v_r.shape}/{codebook.u_t.shape} do not match channel "
            f"dimensions Nr={nr}, Nt={nt}"
        )
    return np.einsum("ar,mnab,bl->mnrl", codebook.v_r.conj(), H, codebook.u_t)


def effective_gains(channels: ChannelSet, codebook: Codebook) -> EffectiveGains:
    """rho[m, r, n, l] = |v_r^H H[m, n] u_l|^2."""
    beamformed = beamformed_channels(channels, codebook)
    power = np.abs(beamformed) ** 2
    return EffectiveGains(rho=np.ascontiguousarray(power.transpose(0, 2, 1, 3)))


def generate_sample(config: SimConfig, rng: RngState):
    """
    Run the full pipeline for one sample: topology, channels, codebook.

    Returns:
        (topology, channels, codebook)
    """
    topology = gen_topology(config, rng)
    channels = gen_channels(topology, config, rng)
    return topology, channels, make_codebook(config)
