"""
GBLinks: graph neural scheduler over the wireless channel graph.

Each layer aggregates MLP1 messages from every neighbor with element-wise MAX
and MEAN, then two policy MLPs update the transmit and receive selection rows.
All vertices in a layer read the previous layer's policy (synchronous update).

The vectorized path (``forward_batch``) runs B samples with the same pair count
at once and can record a trace for the gradient engine. ``aggregate`` and
``combine`` expose the per-vertex steps for inspection.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.models import (
    Activation,
    BeamPolicy,
    GraphFeatures,
    LayerParams,
    MlpParams,
    ModelParams,
)
from services.rng import RngState, next_uniform

logger = logging.getLogger(__name__)

DEFAULT_MESSAGE_HIDDEN = (256, 128)
DEFAULT_AGG_WIDTH = 64
DEFAULT_POLICY_HIDDEN = (256, 128, 64)
DEFAULT_INIT_VALUE = 0.5

# Channel moduli enter the network on a log scale: FEATURE_REF maps to 0 and
# every FEATURE_DECADES decades add 1. Moduli below FEATURE_FLOOR are clipped.
FEATURE_REF = 1e-2
FEATURE_DECADES = 2.0
FEATURE_FLOOR = 1e-8


def project(u):
    """Box projection onto [0, 1]."""
    return np.clip(u, 0.0, 1.0)


def scale_features(kappa: np.ndarray) -> np.ndarray:
    """
    Element-wise log map of channel moduli onto the network input scale.

    Beam ordering is preserved and the map commutes with any relabeling of pairs.
    Every entry point of the network (forward, aggregate, combine) applies it.
    """
    return np.log10(np.maximum(kappa, FEATURE_FLOOR) / FEATURE_REF) / FEATURE_DECADES


def _init_mlp(widths: Sequence[int], output_activation: Activation, rng: RngState) -> MlpParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        draws = np.array([next_uniform(rng) for _ in range(fan_in * fan_out)])
        weights.append(((2.0 * draws - 1.0) * bound).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases, output_activation=output_activation)


def layer_widths(n_tx: int, n_rx: int,
                 message_hidden: Sequence[int] = DEFAULT_MESSAGE_HIDDEN,
                 agg_width: int = DEFAULT_AGG_WIDTH,
                 policy_hidden: Sequence[int] = DEFAULT_POLICY_HIDDEN) -> Dict[str, List[int]]:
    """Widths of the three MLPs of one layer."""
    d = n_tx * n_rx
    return {
        "mlp1": [3 * d + n_rx + n_tx, *message_hidden, agg_width],
        "mlp_tx": [2 * agg_width + d + n_tx, *policy_hidden, n_tx],
        "mlp_rx": [2 * agg_width + d + n_rx, *policy_hidden, n_rx],
    }


def init_params(n_tx: int, n_rx: int, n_layers: int, rng: RngState,
                message_hidden: Sequence[int] = DEFAULT_MESSAGE_HIDDEN,
                agg_width: int = DEFAULT_AGG_WIDTH,
                policy_hidden: Sequence[int] = DEFAULT_POLICY_HIDDEN) -> ModelParams:
    """
    Xavier-uniform weights and zero biases for K independent layers.

    Args:
        n_tx: Transmit antennas (Nt)
        n_rx: Receive antennas (Nr)
        n_layers: Layer count K
        rng: Stream for the weight draws (layer, then mlp1/tx/rx, then dense layer order)
        message_hidden: Hidden widths of MLP1
        agg_width: Output width f of MLP1
        policy_hidden: Hidden widths of the policy MLPs

    Returns:
        ModelParams
    """
    if min(n_tx, n_rx, n_layers) < 1:
        raise ValueError(f"Nt, Nr and K must be >= 1, got Nt={n_tx}, Nr={n_rx}, K={n_layers}")
    widths = layer_widths(n_tx, n_rx, message_hidden, agg_width, policy_hidden)
    layers = []
    for _ in range(n_layers):
        layers.append(LayerParams(
            mlp1=_init_mlp(widths["mlp1"], Activation.RELU, rng),
            mlp_tx=_init_mlp(widths["mlp_tx"], Activation.PROJECT, rng),
            mlp_rx=_init_mlp(widths["mlp_rx"], Activation.PROJECT, rng),
        ))
    return ModelParams(n_tx=n_tx, n_rx=n_rx, agg_width=agg_width, layers=layers)


def flatten_params(params: ModelParams) -> List[np.ndarray]:
    """Parameter arrays in canonical order: per layer, per MLP, weights then biases."""
    arrays = []
    for layer in params.layers:
        for mlp in (layer.mlp1, layer.mlp_tx, layer.mlp_rx):
            arrays.extend(mlp.weights)
            arrays.extend(mlp.biases)
    return arrays


def unflatten_params(template: ModelParams, arrays: Sequence[np.ndarray]) -> ModelParams:
    """Inverse of flatten_params, shaped after ``template``."""
    it = iter(arrays)
    layers = []
    for layer in template.layers:
        mlps = []
        for mlp in (layer.mlp1, layer.mlp_tx, layer.mlp_rx):
            weights = [next(it) for _ in mlp.weights]
            biases = [next(it) for _ in mlp.biases]
            mlps.append(MlpParams(weights=weights, biases=biases, output_activation=mlp.output_activation))
        layers.append(LayerParams(mlp1=mlps[0], mlp_tx=mlps[1], mlp_rx=mlps[2]))
    return ModelParams(n_tx=template.n_tx, n_rx=template.n_rx, agg_width=template.agg_width, layers=layers)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    if activation == Activation.PROJECT:
        return project(z)
    return z


def mlp_forward(mlp: MlpParams, x: np.ndarray,
                trace: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None) -> np.ndarray:
    """
    Apply the MLP along the last axis of ``x``.

    When ``trace`` is given, (input, preactivation) of every dense layer is appended.
    """
    last = len(mlp.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        if trace is not None:
            trace.append((h, z))
        h = _activate(z, mlp.output_activation if i == last else Activation.RELU)
    return h


def neighbor_index(n_pairs: int) -> np.ndarray:
    """(N, N-1) array whose row m lists every n != m in increasing order."""
    idx = np.arange(n_pairs)
    return np.array([idx[idx != m] for m in range(n_pairs)], dtype=np.int64).reshape(n_pairs, n_pairs - 1)


def default_policy_init(n_pairs: int, n_rx: int, n_tx: int,
                        batch: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform 0.5 starting policy (phi, psi), optionally with a batch axis."""
    lead = () if batch is None else (batch,)
    return (np.full(lead + (n_pairs, n_rx), DEFAULT_INIT_VALUE),
            np.full(lead + (n_pairs, n_tx), DEFAULT_INIT_VALUE))


def check_dimensions(params: ModelParams, kappa: np.ndarray) -> None:
    d = params.n_tx * params.n_rx
    if kappa.shape[-1] != d or kappa.shape[-2] != kappa.shape[-3]:
        raise ValueError(
            f"Feature tensor of shape {kappa.shape} does not match model with Nt={params.n_tx}, "
            f"Nr={params.n_rx} (expected (..., N, N, {d}))"
        )


def _message_inputs(kappa, phi, psi, neighbors):
    n = kappa.shape[1]
    own = np.arange(n)[:, None]
    diag = kappa[:, np.arange(n), np.arange(n)]
    k_nn = diag[:, neighbors]
    k_mn = kappa[:, own, neighbors]
    k_nm = kappa[:, neighbors, own]
    lead = k_nn.shape[:-1]
    phi_m = np.broadcast_to(phi[:, :, None, :], lead + (phi.shape[-1],))
    psi_m = np.broadcast_to(psi[:, :, None, :], lead + (psi.shape[-1],))
    return np.concatenate([k_nn, k_mn, k_nm, phi_m, psi_m], axis=-1)


def layer_forward(layer: LayerParams, kappa: np.ndarray, phi: np.ndarray, psi: np.ndarray,
                  trace: Optional[dict] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    One synchronous aggregate + combine round on a batch.

    Args:
        layer: Weights of this round
        kappa: (B, N, N, d) features already passed through scale_features
        phi, psi: (B, N, Nr), (B, N, Nt) previous policies
        trace: Optional dict receiving intermediates for backpropagation

    Returns:
        (phi_new, psi_new)
    """
    batch, n = kappa.shape[0], kappa.shape[1]
    f = layer.mlp1.weights[-1].shape[1]
    diag = kappa[:, np.arange(n), np.arange(n)]
    mlp1_trace = [] if trace is not None else None
    argmax = None
    if n >= 2:
        neighbors = neighbor_index(n)
        msg_in = _message_inputs(kappa, phi, psi, neighbors)
        messages = mlp_forward(layer.mlp1, msg_in, mlp1_trace)
        argmax = np.argmax(messages, axis=2)
        agg_max = np.take_along_axis(messages, argmax[:, :, None, :], axis=2)[:, :, 0, :]
        agg = np.concatenate([agg_max, messages.mean(axis=2)], axis=-1)
    else:
        agg = np.zeros((batch, n, 2 * f))

    tx_in = np.concatenate([agg, diag, psi], axis=-1)
    rx_in = np.concatenate([agg, diag, phi], axis=-1)
    tx_trace = [] if trace is not None else None
    rx_trace = [] if trace is not None else None
    psi_new = mlp_forward(layer.mlp_tx, tx_in, tx_trace)
    phi_new = mlp_forward(layer.mlp_rx, rx_in, rx_trace)

    if trace is not None:
        trace.update(n=n, agg_width=f, argmax=argmax, mlp1=mlp1_trace, mlp_tx=tx_trace, mlp_rx=rx_trace)
    return phi_new, psi_new


def forward_batch(params: ModelParams, kappa: np.ndarray, phi0: Optional[np.ndarray] = None,
                  psi0: Optional[np.ndarray] = None,
                  traces: Optional[List[dict]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run all K layers on a batch of graphs.

    Args:
        params: Model weights
        kappa: (B, N, N, Nr * Nt) raw channel moduli
        phi0, psi0: Initial policies (default 0.5 everywhere)
        traces: Optional list that receives one trace dict per layer

    Returns:
        (phi, psi) of the final layer, entries in [0, 1]
    """
    check_dimensions(params, kappa)
    batch, n = kappa.shape[0], kappa.shape[1]
    kappa = scale_features(kappa)
    default_phi, default_psi = default_policy_init(n, params.n_rx, params.n_tx, batch)
    phi = default_phi if phi0 is None else phi0
    psi = default_psi if psi0 is None else psi0
    for layer in params.layers:
        trace = {} if traces is not None else None
        phi, psi = layer_forward(layer, kappa, phi, psi, trace)
        if traces is not None:
            traces.append(trace)
    return phi, psi


def forward(params: ModelParams, features: GraphFeatures,
            policy_init: Optional[BeamPolicy] = None) -> BeamPolicy:
    """K rounds of aggregate + combine on one graph."""
    kappa = features.kappa[None]
    phi0 = psi0 = None
    if policy_init is not None:
        phi0, psi0 = policy_init.phi[None], policy_init.psi[None]
    phi, psi = forward_batch(params, kappa, phi0, psi0)
    return BeamPolicy(phi=phi[0], psi=psi[0])


def aggregate(params: ModelParams, features: GraphFeatures, policy_prev: BeamPolicy,
              m: int, layer: int = 0) -> np.ndarray:
    """
    Neighborhood summary of vertex m: concat(MAX, MEAN) of MLP1 messages.

    Returns the zero vector of width 2f when the graph has a single vertex.
    """
    check_dimensions(params, features.kappa)
    mlp1 = params.layers[layer].mlp1
    kappa = scale_features(features.kappa)
    n = kappa.shape[0]
    if n < 2:
        return np.zeros(2 * params.agg_width)
    messages = []
    for j in range(n):
        if j == m:
            continue
        x = np.concatenate([kappa[j, j], kappa[m, j], kappa[j, m], policy_prev.phi[m], policy_prev.psi[m]])
        messages.append(mlp_forward(mlp1, x))
    messages = np.stack(messages)
    return np.concatenate([messages.max(axis=0), messages.mean(axis=0)])


def combine(params: ModelParams, agg: np.ndarray, features: GraphFeatures, policy_prev: BeamPolicy,
            m: int, layer: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Updated (transmit row, receive row) of vertex m, projected onto [0, 1]."""
    weights = params.layers[layer]
    own = scale_features(features.kappa[m, m])
    tx_row = mlp_forward(weights.mlp_tx, np.concatenate([agg, own, policy_prev.psi[m]]))
    rx_row = mlp_forward(weights.mlp_rx, np.concatenate([agg, own, policy_prev.phi[m]]))
    return tx_row, rx_row


def count_parameters(params: ModelParams) -> int:
    return int(sum(a.size for a in flatten_params(params)))
