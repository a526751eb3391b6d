"""
Gradient engine: exact backpropagation of the Lagrangian loss through GBLinks,
Adam and plain SGD updates, and a central finite-difference checker.

Subgradient conventions: ReLU'(0) = 0, the projection has slope 1 only strictly
inside (0, 1), MAX routes to the lowest achieving index, |x|' at 0 is 0.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.models import (
    Activation,
    AdamState,
    DualMultipliers,
    EffectiveGains,
    GradCheckReport,
    GraphFeatures,
    LayerParams,
    MlpParams,
    ModelParams,
    SimConfig,
)
from services.gblinks import flatten_params, forward_batch, unflatten_params
from services.problem import batch_loss_and_policy_grad
from services.rng import RngState, next_uniform

logger = logging.getLogger(__name__)


class GradientContext:
    """Record of one batched forward pass, enough to run the backward sweep."""

    def __init__(self, traces: List[dict], phi: np.ndarray, psi: np.ndarray, sample_losses: np.ndarray):
        self.traces = traces
        self.phi = phi
        self.psi = psi
        self.sample_losses = sample_losses

    @property
    def loss(self) -> float:
        return float(self.sample_losses.sum())

    def kink_signature(self) -> List[np.ndarray]:
        """Branch choices of every nondifferentiable operation in the pass."""
        signature = []
        for trace in self.traces:
            for key in ("mlp1", "mlp_tx", "mlp_rx"):
                layers = trace[key] or []
                for _, z in layers:
                    signature.append(z > 0)
                if key != "mlp1" and layers:
                    signature.append(layers[-1][1] < 1)
            if trace["argmax"] is not None:
                signature.append(trace["argmax"])
        sum_tx = self.psi.sum(axis=-1)
        sum_rx = self.phi.sum(axis=-1)
        signature.extend([sum_tx > 1.0, sum_rx > 1.0, np.sign(sum_tx - sum_rx)])
        return signature


def mlp_backward(mlp: MlpParams, trace: Sequence[Tuple[np.ndarray, np.ndarray]],
                 d_out: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """
    Backpropagate through one MLP.

    Args:
        mlp: Weights used in the forward pass
        trace: (input, preactivation) per dense layer from mlp_forward
        d_out: Gradient w.r.t. the MLP output

    Returns:
        (gradient w.r.t. the input, weight gradients, bias gradients)
    """
    last = len(trace) - 1
    d_weights: List[Optional[np.ndarray]] = [None] * len(trace)
    d_biases: List[Optional[np.ndarray]] = [None] * len(trace)
    d_act = d_out
    for i in range(last, -1, -1):
        h_in, z = trace[i]
        activation = mlp.output_activation if i == last else Activation.RELU
        if activation == Activation.RELU:
            dz = d_act * (z > 0)
        elif activation == Activation.PROJECT:
            dz = d_act * ((z > 0) & (z < 1))
        else:
            dz = d_act
        flat_dz = dz.reshape(-1, dz.shape[-1])
        d_weights[i] = h_in.reshape(-1, h_in.shape[-1]).T @ flat_dz
        d_biases[i] = flat_dz.sum(axis=0)
        d_act = dz @ mlp.weights[i].T
    return d_act, d_weights, d_biases


def layer_backward(layer: LayerParams, trace: dict, d_phi: np.ndarray,
                   d_psi: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray, np.ndarray]:
    """
    Backpropagate through one aggregate + combine round.

    Returns:
        (parameter gradients in canonical order, d loss / d phi_prev, d loss / d psi_prev)
    """
    f, n = trace["agg_width"], trace["n"]
    n_tx, n_rx = d_psi.shape[-1], d_phi.shape[-1]
    d_tx_in, gw_tx, gb_tx = mlp_backward(layer.mlp_tx, trace["mlp_tx"], d_psi)
    d_rx_in, gw_rx, gb_rx = mlp_backward(layer.mlp_rx, trace["mlp_rx"], d_phi)
    d_psi_prev = d_tx_in[..., -n_tx:].copy()
    d_phi_prev = d_rx_in[..., -n_rx:].copy()
    d_agg = d_tx_in[..., :2 * f] + d_rx_in[..., :2 * f]

    if n >= 2:
        batch = d_agg.shape[0]
        d_max, d_mean = d_agg[..., :f], d_agg[..., f:]
        d_msg = np.repeat(d_mean[:, :, None, :] / (n - 1), n - 1, axis=2)
        routed = np.zeros((batch, n, n - 1, f))
        np.put_along_axis(routed, trace["argmax"][:, :, None, :], d_max[:, :, None, :], axis=2)
        d_msg += routed
        d_msg_in, gw_1, gb_1 = mlp_backward(layer.mlp1, trace["mlp1"], d_msg)
        base = d_msg_in.shape[-1] - n_rx - n_tx
        d_phi_prev += d_msg_in[..., base:base + n_rx].sum(axis=2)
        d_psi_prev += d_msg_in[..., base + n_rx:].sum(axis=2)
    else:
        gw_1 = [np.zeros_like(w) for w in layer.mlp1.weights]
        gb_1 = [np.zeros_like(b) for b in layer.mlp1.biases]

    grads = gw_1 + gb_1 + gw_tx + gb_tx + gw_rx + gb_rx
    return grads, d_phi_prev, d_psi_prev


def batch_loss_and_grad(params: ModelParams, kappa: np.ndarray, rho: np.ndarray,
                        duals: DualMultipliers, config: SimConfig,
                        phi0: Optional[np.ndarray] = None,
                        psi0: Optional[np.ndarray] = None) -> Tuple[float, List[np.ndarray], GradientContext]:
    """
    Summed Lagrangian loss of a batch and its gradient w.r.t. every parameter.

    Args:
        params: Model weights
        kappa: (B, N, N, Nr * Nt) features
        rho: (B, N, Nr, N, Nt) gains
        duals: Current multipliers (shared across the batch)
        config: Scenario (power, noise, weights)
        phi0, psi0: Optional initial policies

    Returns:
        (loss, gradients in canonical order, forward record)
    """
    if kappa.shape[0] == 0:
        raise ValueError("Batch must contain at least one sample")
    traces: List[dict] = []
    phi, psi = forward_batch(params, kappa, phi0, psi0, traces)
    sample_losses, d_phi, d_psi = batch_loss_and_policy_grad(
        rho, phi, psi, duals, config.tx_power, config.noise_power, config.weight_vector()
    )
    per_layer = []
    for layer, trace in zip(reversed(params.layers), reversed(traces)):
        grads, d_phi, d_psi = layer_backward(layer, trace, d_phi, d_psi)
        per_layer.append(grads)
    flat = [g for grads in reversed(per_layer) for g in grads]
    return float(sample_losses.sum()), flat, GradientContext(traces, phi, psi, sample_losses)


def loss_and_grad(params: ModelParams, batch: Sequence[Tuple[GraphFeatures, EffectiveGains]],
                  duals: DualMultipliers, config: SimConfig) -> Tuple[float, ModelParams]:
    """Loss summed over (features, gains) samples and its ModelParams-shaped gradient."""
    if not batch:
        raise ValueError("Batch must contain at least one sample")
    kappa = np.stack([features.kappa for features, _ in batch])
    rho = np.stack([gains.rho for _, gains in batch])
    loss, flat, _ = batch_loss_and_grad(params, kappa, rho, duals, config)
    return loss, unflatten_params(params, flat)


def init_adam(params: ModelParams) -> AdamState:
    arrays = flatten_params(params)
    return AdamState(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays])


def _as_arrays(grads) -> List[np.ndarray]:
    return flatten_params(grads) if isinstance(grads, ModelParams) else list(grads)


def adam_step(params: ModelParams, grads, state: AdamState, lr: float) -> Tuple[ModelParams, AdamState]:
    """
    One bias-corrected Adam update. Inputs are left untouched.

    Args:
        params: Current weights
        grads: ModelParams-shaped gradient or arrays in canonical order
        state: Moments and step counter
        lr: Step size zeta

    Returns:
        (updated params, updated state)
    """
    if not lr > 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    arrays = flatten_params(params)
    grad_arrays = _as_arrays(grads)
    if len(grad_arrays) != len(arrays) or len(state.m) != len(arrays):
        raise ValueError("Gradient or optimizer state does not match the parameter layout")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grad_arrays, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(m=new_m, v=new_v, t=t, beta1=b1, beta2=b2, eps=state.eps)
    return unflatten_params(params, new_params), new_state


def sgd_step(params: ModelParams, grads, lr: float) -> ModelParams:
    """Plain gradient step params - lr * grads."""
    arrays = flatten_params(params)
    return unflatten_params(params, [p - lr * g for p, g in zip(arrays, _as_arrays(grads))])


def _same_signature(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(params: ModelParams, features: GraphFeatures, gains: EffectiveGains,
                      duals: DualMultipliers, config: SimConfig, h: float, count: int,
                      rng: RngState) -> GradCheckReport:
    """
    Compare analytic gradients to central differences on random parameters.

    A candidate is excluded when the +h or -h evaluation takes a different
    branch at any kink than the unperturbed pass. A candidate whose analytic and
    numeric gradients both sit below the rounding resolution of the difference
    quotient cannot be compared to 1e-4; it is counted as unverifiable and never
    enters the error statistics or the checked count.

    Args:
        params: Model weights at the evaluation point
        features: One graph
        gains: Its gain tensor
        duals: Multipliers in the loss
        config: Scenario
        h: Perturbation size
        count: Parameters to compare
        rng: Stream used to pick parameters

    Returns:
        GradCheckReport
    """
    if not h > 0:
        raise ValueError(f"Finite-difference step must be positive, got {h}")
    kappa, rho = features.kappa[None], gains.rho[None]
    base_loss, analytic, base_ctx = batch_loss_and_grad(params, kappa, rho, duals, config)
    base_signature = base_ctx.kink_signature()
    arrays = [a.copy() for a in flatten_params(params)]
    sizes = np.array([a.size for a in arrays])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    resolution = 1e5 * np.finfo(float).eps * max(abs(base_loss), 1.0) / h

    def evaluate(position: int, array_idx: int, value: float):
        perturbed = list(arrays)
        perturbed[array_idx] = arrays[array_idx].copy()
        perturbed[array_idx].flat[position] = value
        loss, _, ctx = batch_loss_and_grad(unflatten_params(params, perturbed), kappa, rho, duals, config)
        return loss, ctx.kink_signature()

    errors, seen = [], set()
    excluded = unverifiable = 0
    attempts = 0
    while len(errors) < count and len(seen) < total and attempts < 20 * count:
        attempts += 1
        flat_idx = min(int(next_uniform(rng) * total), total - 1)
        if flat_idx in seen:
            continue
        seen.add(flat_idx)
        array_idx = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        position = flat_idx - int(offsets[array_idx])
        original = float(arrays[array_idx].flat[position])
        loss_plus, sig_plus = evaluate(position, array_idx, original + h)
        loss_minus, sig_minus = evaluate(position, array_idx, original - h)
        if not (_same_signature(sig_plus, base_signature) and _same_signature(sig_minus, base_signature)):
            excluded += 1
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        exact = float(analytic[array_idx].flat[position])
        scale = max(abs(exact), abs(numeric))
        if 0.0 < scale < resolution:
            unverifiable += 1
            continue
        errors.append(abs(exact - numeric) / max(scale, 1e-8))

    report = GradCheckReport(
        max_rel_err=float(max(errors)) if errors else 0.0,
        mean_rel_err=float(np.mean(errors)) if errors else 0.0,
        checked=len(errors),
        excluded=excluded,
        unverifiable=unverifiable,
        step=h,
    )
    logger.info(f"Gradient check: {report.checked} parameters, {report.excluded} excluded, "
                f"{report.unverifiable} below resolution, "
                f"max rel err {report.max_rel_err:.3e}")
    return report
