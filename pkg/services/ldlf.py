"""
Lagrangian dual learning: minibatch primal updates of the GBLinks weights and
per-epoch subgradient ascent on the constraint multipliers.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Tuple

import numpy as np
from dotenv import load_dotenv

from src.models import (
    Dataset,
    DualMultipliers,
    EpochRecord,
    ModelParams,
    OptimizerName,
    SimConfig,
    TrainConfig,
    TrainReport,
    ViolationReport,
)
from services.gblinks import count_parameters
from services.grad_engine import adam_step, batch_loss_and_grad, init_adam, sgd_step
from services.problem import batch_round, batch_violation_terms, batch_weighted_sum_rate
from services.rng import next_uniform, seed_from

load_dotenv()

logger = logging.getLogger(__name__)

VIOLATION_KEYS = ("binary_tx", "binary_rx", "row_tx", "row_rx", "coupling")


def zero_accumulator(n_pairs: int, n_tx: int, n_rx: int) -> ViolationReport:
    return ViolationReport(
        binary_tx=np.zeros((n_pairs, n_tx)),
        binary_rx=np.zeros((n_pairs, n_rx)),
        row_tx=np.zeros(n_pairs),
        row_rx=np.zeros(n_pairs),
        coupling=np.zeros(n_pairs),
    )


def accumulate(acc: ViolationReport, phi: np.ndarray, psi: np.ndarray) -> ViolationReport:
    """Add the residuals of a batch of policies (B, N, .) into the epoch sums."""
    terms = batch_violation_terms(phi, psi)
    return ViolationReport(**{key: getattr(acc, key) + terms[key].sum(axis=0) for key in VIOLATION_KEYS})


def dual_update(duals: DualMultipliers, accumulated: ViolationReport, config: TrainConfig) -> DualMultipliers:
    """
    One subgradient ascent step on every multiplier.

    Args:
        duals: Multipliers of the finished epoch
        accumulated: Residual sums over the epoch
        config: Holds the five step sizes

    Returns:
        New multipliers, clipped at zero
    """
    return DualMultipliers(
        lam=np.maximum(0.0, duals.lam + config.eps_lambda * accumulated.binary_tx),
        mu=np.maximum(0.0, duals.mu + config.eps_mu * accumulated.binary_rx),
        nu=np.maximum(0.0, duals.nu + config.eps_nu * accumulated.row_tx),
        xi=np.maximum(0.0, duals.xi + config.eps_xi * accumulated.row_rx),
        rho_dual=np.maximum(0.0, duals.rho_dual + config.eps_rho * accumulated.coupling),
    )


def epoch_order(sample_count: int, config: TrainConfig, epoch: int) -> np.ndarray:
    """Sample order of an epoch: consecutive, or a seeded Fisher-Yates shuffle."""
    order = np.arange(sample_count)
    if not config.shuffle:
        return order
    rng = seed_from(config.seed, epoch)
    for i in range(sample_count - 1, 0, -1):
        j = min(int(next_uniform(rng) * (i + 1)), i)
        order[i], order[j] = order[j], order[i]
    return order


def _worker_count() -> int:
    return max(1, int(os.getenv("BEAMGRAPH_THREADS", "1")))


def _batch_step_inputs(params, kappa, rho, duals, sim, reproducible: bool):
    """Loss, summed gradients and output policies of one minibatch."""
    workers = _worker_count()
    if reproducible or workers == 1 or kappa.shape[0] == 1:
        loss, grads, ctx = batch_loss_and_grad(params, kappa, rho, duals, sim)
        return loss, grads, ctx.phi, ctx.psi

    chunks = np.array_split(np.arange(kappa.shape[0]), min(workers, kappa.shape[0]))
    loss, grads = 0.0, None
    phis, psis = [None] * len(chunks), [None] * len(chunks)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(batch_loss_and_grad, params, kappa[idx], rho[idx], duals, sim): i
            for i, idx in enumerate(chunks)
        }
        # summation follows completion order
        for future in as_completed(futures):
            part_loss, part_grads, ctx = future.result()
            loss += part_loss
            grads = part_grads if grads is None else [g + p for g, p in zip(grads, part_grads)]
            phis[futures[future]] = ctx.phi
            psis[futures[future]] = ctx.psi
    return loss, grads, np.concatenate(phis), np.concatenate(psis)


def _rounded_wsr(rho: np.ndarray, phi: np.ndarray, psi: np.ndarray, sim: SimConfig,
                 threshold: float) -> np.ndarray:
    binary_phi, binary_psi = batch_round(phi, psi, threshold)
    return batch_weighted_sum_rate(rho, binary_phi, binary_psi, sim.tx_power, sim.noise_power,
                                   sim.weight_vector())


def train(dataset: Dataset, model: ModelParams, config: TrainConfig) -> Tuple[ModelParams, TrainReport]:
    """
    Train GBLinks with the Lagrangian dual learning loop.

    Multipliers start at zero. Each minibatch runs forward, evaluates the
    summed Lagrangian loss with the current multipliers, takes one optimizer
    step and adds its pre-update residuals to the epoch sums; the multipliers
    are updated once per epoch from those sums.

    Args:
        dataset: Training samples
        model: Initial weights (left untouched)
        config: Training settings

    Returns:
        (trained params, TrainReport)

    Raises:
        ValueError: If the dataset is empty or its antenna counts differ from the model's
    """
    sim = dataset.config
    if len(dataset) == 0:
        raise ValueError("Training dataset is empty")
    if (sim.n_tx, sim.n_rx) != (model.n_tx, model.n_rx):
        raise ValueError(
            f"Model expects Nt={model.n_tx}, Nr={model.n_rx}; dataset has Nt={sim.n_tx}, Nr={sim.n_rx}"
        )

    n, s = sim.n_pairs, len(dataset)
    duals = DualMultipliers.zeros(n, sim.n_tx, sim.n_rx)
    report = TrainReport(records=[], final_duals=duals)
    if config.epochs == 0:
        return model, report

    params = model
    adam = init_adam(params)
    logger.info(f"Training {count_parameters(params)} parameters on {s} samples for {config.epochs} epochs "
                f"(batch {config.batch_size}, optimizer {config.optimizer.value})")

    for epoch in range(config.epochs):
        acc = zero_accumulator(n, sim.n_tx, sim.n_rx)
        order = epoch_order(s, config, epoch)
        loss_total, wsr_total = 0.0, 0.0
        for start in range(0, s, config.batch_size):
            idx = order[start:start + config.batch_size]
            kappa, rho = dataset.kappa[idx], dataset.rho[idx]
            loss, grads, phi, psi = _batch_step_inputs(params, kappa, rho, duals, sim, config.reproducible_mode)
            if config.optimizer == OptimizerName.ADAM:
                params, adam = adam_step(params, grads, adam, config.lr)
            else:
                params = sgd_step(params, grads, config.lr)
            acc = accumulate(acc, phi, psi)
            loss_total += loss
            wsr_total += float(_rounded_wsr(rho, phi, psi, sim, config.round_threshold).sum())

        violation_means = {
            key: float(getattr(acc, key).sum() / (s * getattr(acc, key).size)) for key in VIOLATION_KEYS
        }
        duals = dual_update(duals, acc, config)
        record = EpochRecord(
            epoch=epoch,
            loss=loss_total / s,
            wsr=wsr_total / s,
            violations=violation_means,
            dual_norms=duals.norms(),
        )
        report.records.append(record)
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss={record.loss:.4f} wsr={record.wsr:.4f} "
                    f"coupling={violation_means['coupling']:.4f}")

    report.final_duals = duals
    return params, report

