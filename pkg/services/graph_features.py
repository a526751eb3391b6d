"""
Wireless channel graph: vertex and edge features of the directed complete graph.
"""

import numpy as np

from src.models import ChannelSet, Codebook, GraphFeatures
from services.channel import beamformed_channels


def build_features(channels: ChannelSet, codebook: Codebook) -> GraphFeatures:
    """
    Build kappa[i, j] = |flatten(V_r^H H[i, j] U_t)|.

    Entry (r, l) of the beamformed matrix lands at flat index r * Nt + l. The
    modulus is taken for edges as well as vertices so all features are real.

    Args:
        channels: Channel tensor (N, N, Nr, Nt)
        codebook: Matching DFT codebooks

    Returns:
        GraphFeatures with kappa of shape (N, N, Nr * Nt)
    """
    beamformed = beamformed_channels(channels, codebook)
    n, _, nr, nt = beamformed.shape
    kappa = np.abs(beamformed).reshape(n, n, nr * nt)
    return GraphFeatures(kappa=kappa)

