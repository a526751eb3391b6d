"""
Successive convex approximation solver for joint beam selection and link activation.

The binary relaxation penalties are split into differences of convex functions,
the concave parts are linearized at the current iterate, and the bilinear
products phi[m, r] * psi[n, l] are replaced by variables w_bar bounded by their
McCormick envelope. Each convex subproblem is solved by an augmented Lagrangian
method with box-projected gradient steps. An outer loop raises the penalty
multipliers theta (transmit) and delta (receive) until the objective settles.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.models import (
    BeamPolicy,
    BinarySelection,
    EffectiveGains,
    ScaConfig,
    ScaState,
    ScaSurrogates,
    ScaTraceRecord,
    SimConfig,
)
from services.baselines import greedy_nosched
from services.problem import round_policy, selection_to_policy, selection_wsr

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
_TINY = 1e-12
_MAX_PENALTY = 1e8


class SubproblemNonConvergence(RuntimeError):
    """The convex subproblem solver hit its iteration cap while still infeasible."""

    def __init__(self, residuals: Dict[str, float]):
        self.residuals = residuals
        detail = ", ".join(f"{k}={v:.3e}" for k, v in residuals.items())
        super().__init__(f"Subproblem did not reach feasibility: {detail}")


def init_state(n_pairs: int, n_rx: int, n_tx: int) -> ScaState:
    """Single active pair (pair 0 on beams (0, 0)), multipliers at zero."""
    if min(n_pairs, n_rx, n_tx) < 1:
        raise ValueError(f"Dimensions must be >= 1, got N={n_pairs}, Nr={n_rx}, Nt={n_tx}")
    phi = np.zeros((n_pairs, n_rx))
    psi = np.zeros((n_pairs, n_tx))
    w_bar = np.zeros((n_pairs, n_pairs, n_rx, n_tx))
    phi[0, 0] = psi[0, 0] = w_bar[0, 0, 0, 0] = 1.0
    return ScaState(phi=phi, psi=psi, w_bar=w_bar)


def dc_terms(phi: np.ndarray, psi: np.ndarray, theta: float, delta: float) -> Dict[str, float]:
    """Convex parts g and h with g1 - h1 = theta * sum(psi - psi^2), g2 - h2 likewise for phi."""
    s_tx, s_rx = float(psi.sum()), float(phi.sum())
    return {
        "g1": theta * (s_tx + s_tx ** 2),
        "h1": theta * (float((psi ** 2).sum()) + s_tx ** 2),
        "g2": delta * (s_rx + s_rx ** 2),
        "h2": delta * (float((phi ** 2).sum()) + s_rx ** 2),
    }


def _link_gains(gains: EffectiveGains, config: SimConfig) -> np.ndarray:
    """p * rho reordered to (m, n, r, l) to align with w_bar."""
    return config.tx_power * gains.rho.transpose(0, 2, 1, 3)


def _off_diagonal(n: int) -> np.ndarray:
    return (1.0 - np.eye(n))[:, :, None, None]


def _rate_terms(w_bar: np.ndarray, link: np.ndarray, noise_power: float):
    """Interference (N, Nr), signal (N, Nr, Nt) and f-argument A (N, Nr, Nt)."""
    n = w_bar.shape[0]
    interference = np.sum(w_bar * link * _off_diagonal(n), axis=(1, 3))
    signal = np.einsum("mmrt->mrt", w_bar * link)
    total = interference[:, :, None] + noise_power + signal
    return interference, signal, total


def taylor_surrogates(state: ScaState, gains: EffectiveGains, config: SimConfig) -> ScaSurrogates:
    """First-order expansions of h1, h2 and the interference log q at the current iterate."""
    link = _link_gains(gains, config)
    terms = dc_terms(state.phi, state.psi, state.theta, state.delta)
    interference, _, _ = _rate_terms(state.w_bar, link, config.noise_power)
    denom = interference + config.noise_power
    return ScaSurrogates(
        phi0=state.phi.copy(),
        psi0=state.psi.copy(),
        theta=state.theta,
        delta=state.delta,
        h1_0=terms["h1"],
        h2_0=terms["h2"],
        h1_grad=2.0 * state.theta * (state.psi + state.psi.sum()),
        h2_grad=2.0 * state.delta * (state.phi + state.phi.sum()),
        q0=np.log2(denom),
        interference0=interference,
        denom0=denom,
    )


def h1_bar(sur: ScaSurrogates, psi: np.ndarray) -> float:
    return float(sur.h1_0 + np.sum(sur.h1_grad * (psi - sur.psi0)))


def h2_bar(sur: ScaSurrogates, phi: np.ndarray) -> float:
    return float(sur.h2_0 + np.sum(sur.h2_grad * (phi - sur.phi0)))


def q_bar(sur: ScaSurrogates, interference: np.ndarray) -> np.ndarray:
    """Tangent upper bound of log2(I + sigma^2) in I, shape (N, Nr)."""
    return sur.q0 + (interference - sur.interference0) / (LN2 * sur.denom0)


def true_objective(phi: np.ndarray, psi: np.ndarray, w_bar: np.ndarray, theta: float, delta: float,
                   gains: EffectiveGains, config: SimConfig) -> float:
    """-sum w (f - q) + theta sum(psi - psi^2) + delta sum(phi - phi^2) in the relaxed variables."""
    link = _link_gains(gains, config)
    interference, _, total = _rate_terms(w_bar, link, config.noise_power)
    weights = config.weight_vector()
    rates = np.log2(total) - np.log2(interference + config.noise_power)[:, :, None]
    terms = dc_terms(phi, psi, theta, delta)
    return float(-np.einsum("mrt,m->", rates, weights)
                 + terms["g1"] - terms["h1"] + terms["g2"] - terms["h2"])


def _surrogate_value_grad(phi, psi, w_bar, sur: ScaSurrogates, link, config: SimConfig,
                          want_grad: bool = True):
    n, n_rx, n_tx = phi.shape[0], phi.shape[1], psi.shape[1]
    weights = config.weight_vector()
    interference, _, total = _rate_terms(w_bar, link, config.noise_power)
    qb = q_bar(sur, interference)
    s_tx, s_rx = psi.sum(), phi.sum()
    value = (
        -np.einsum("mrt,m->", np.log2(total), weights)
        + n_tx * np.einsum("mr,m->", qb, weights)
        + sur.theta * (s_tx + s_tx ** 2) - h1_bar(sur, psi)
        + sur.delta * (s_rx + s_rx ** 2) - h2_bar(sur, phi)
    )
    if not want_grad:
        return float(value), None

    w = weights[:, None]
    inv_total = 1.0 / total
    coef_off = w * (-inv_total.sum(axis=-1) + n_tx / sur.denom0) / LN2  # (N, Nr)
    g_w = coef_off[:, None, :, None] * link * _off_diagonal(n)
    idx = np.arange(n)
    g_w[idx, idx] = -(w[:, :, None] * inv_total / LN2) * link[idx, idx]
    g_psi = sur.theta * (1.0 + 2.0 * s_tx) - sur.h1_grad
    g_phi = sur.delta * (1.0 + 2.0 * s_rx) - sur.h2_grad
    return float(value), (np.broadcast_to(g_phi, (n, n_rx)).copy(),
                          np.broadcast_to(g_psi, (n, n_tx)).copy(), g_w)


def surrogate_objective(state: ScaState, sur: ScaSurrogates, gains: EffectiveGains,
                        config: SimConfig) -> float:
    """Convex majorizer of the relaxed objective, anchored where ``sur`` was built."""
    value, _ = _surrogate_value_grad(state.phi, state.psi, state.w_bar, sur,
                                     _link_gains(gains, config), config, want_grad=False)
    return value


def constraint_residuals(phi: np.ndarray, psi: np.ndarray, w_bar: np.ndarray) -> Dict[str, np.ndarray]:
    """Signed residuals: inequalities are <= 0 when satisfied, coupling == 0."""
    phi_b = phi[:, None, :, None]
    psi_b = psi[None, :, None, :]
    return {
        "row_tx": psi.sum(axis=1) - 1.0,
        "row_rx": phi.sum(axis=1) - 1.0,
        "coupling": psi.sum(axis=1) - phi.sum(axis=1),
        "mc_lower": phi_b + psi_b - 1.0 - w_bar,
        "mc_phi": w_bar - phi_b,
        "mc_psi": w_bar - psi_b,
    }


def max_violation(phi: np.ndarray, psi: np.ndarray, w_bar: np.ndarray) -> float:
    res = constraint_residuals(phi, psi, w_bar)
    worst = float(np.max(np.abs(res["coupling"])))
    for key in ("row_tx", "row_rx", "mc_lower", "mc_phi", "mc_psi"):
        worst = max(worst, float(np.max(np.maximum(res[key], 0.0))))
    return worst


def mccormick_residuals(phi: np.ndarray, psi: np.ndarray, w_bar: np.ndarray) -> Dict[str, float]:
    res = constraint_residuals(phi, psi, w_bar)
    return {
        "lower": float(np.max(np.maximum(res["mc_lower"], 0.0))),
        "upper_phi": float(np.max(np.maximum(res["mc_phi"], 0.0))),
        "upper_psi": float(np.max(np.maximum(res["mc_psi"], 0.0))),
        "nonnegative": float(np.max(np.maximum(-w_bar, 0.0))),
    }


_INEQUALITIES = ("row_tx", "row_rx", "mc_lower", "mc_phi", "mc_psi")


def _zero_multipliers(n: int, n_rx: int, n_tx: int) -> Dict[str, np.ndarray]:
    return {
        "row_tx": np.zeros(n),
        "row_rx": np.zeros(n),
        "coupling": np.zeros(n),
        "mc_lower": np.zeros((n, n, n_rx, n_tx)),
        "mc_phi": np.zeros((n, n, n_rx, n_tx)),
        "mc_psi": np.zeros((n, n, n_rx, n_tx)),
    }


def _augmented(phi, psi, w_bar, sur, link, config, mult, penalty):
    """PHR augmented Lagrangian value and gradient."""
    value, (g_phi, g_psi, g_w) = _surrogate_value_grad(phi, psi, w_bar, sur, link, config)
    res = constraint_residuals(phi, psi, w_bar)

    eq = res["coupling"]
    value += float(np.sum(mult["coupling"] * eq) + 0.5 * penalty * np.sum(eq ** 2))
    shifted = {}
    for key in _INEQUALITIES:
        s = np.maximum(0.0, mult[key] + penalty * res[key])
        shifted[key] = s
        value += float(np.sum(s ** 2 - mult[key] ** 2) / (2.0 * penalty))

    y = mult["coupling"] + penalty * eq
    g_psi = g_psi + (y + shifted["row_tx"])[:, None]
    g_phi = g_phi + (shifted["row_rx"] - y)[:, None]
    low, up_phi, up_psi = shifted["mc_lower"], shifted["mc_phi"], shifted["mc_psi"]
    g_phi = g_phi + (low - up_phi).sum(axis=(1, 3))
    g_psi = g_psi + (low - up_psi).sum(axis=(0, 2))
    g_w = g_w - low + up_phi + up_psi
    return value, (g_phi, g_psi, g_w)


def _pack(phi, psi, w_bar) -> np.ndarray:
    return np.concatenate([phi.ravel(), psi.ravel(), w_bar.ravel()])


def _unpack(x: np.ndarray, shapes) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    out, start = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(x[start:start + size].reshape(shape))
        start += size
    return out[0], out[1], out[2]


def _projected_gradient(x, fun, max_iter: int, tol: float) -> Tuple[np.ndarray, float]:
    """Box-projected gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    value, grad = fun(x)
    step = 1.0
    pg_norm = float(np.max(np.abs(x - np.clip(x - grad, 0.0, 1.0))))
    for _ in range(max_iter):
        if pg_norm <= tol:
            break
        accepted = False
        for _ in range(40):
            candidate = np.clip(x - step * grad, 0.0, 1.0)
            new_value, new_grad = fun(candidate)
            if new_value <= value + 1e-4 * float(np.dot(grad, candidate - x)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s = candidate - x
        yk = new_grad - grad
        sy = float(np.dot(s, yk))
        x, value, grad = candidate, new_value, new_grad
        step = float(np.dot(s, s)) / sy if sy > 0 else step * 2.0
        step = min(max(step, 1e-10), 1e6)
        pg_norm = float(np.max(np.abs(x - np.clip(x - grad, 0.0, 1.0))))
    return x, pg_norm


def _repair(phi: np.ndarray, psi: np.ndarray, w_bar: np.ndarray):
    """Restore exact feasibility: row sums <= 1, matched activation, McCormick box."""
    phi = np.clip(phi, 0.0, 1.0)
    psi = np.clip(psi, 0.0, 1.0)
    for row in (phi, psi):
        sums = row.sum(axis=1)
        over = sums > 1.0
        row[over] /= sums[over][:, None]
    s_tx, s_rx = psi.sum(axis=1), phi.sum(axis=1)
    for m in range(phi.shape[0]):
        if s_tx[m] > s_rx[m]:
            psi[m] *= s_rx[m] / s_tx[m]
        elif s_rx[m] > s_tx[m]:
            phi[m] *= s_tx[m] / s_rx[m]
    phi_b = phi[:, None, :, None]
    psi_b = psi[None, :, None, :]
    lower = np.maximum(0.0, phi_b + psi_b - 1.0)
    upper = np.minimum(phi_b, psi_b)
    return phi, psi, np.clip(w_bar, lower, upper)


def solve_subproblem(state: ScaState, sur: ScaSurrogates, gains: EffectiveGains, sim: SimConfig,
                     config: ScaConfig) -> ScaState:
    """
    Minimize the surrogate over the relaxed feasible set.

    Augmented Lagrangian rounds on the row, coupling and McCormick constraints
    wrap box-projected gradient solves. The result is repaired to exact
    feasibility; if the repaired point scores worse than the input, the input
    is returned.

    Args:
        state: Expansion point (feasible)
        sur: Surrogates anchored at ``state``
        gains: Instance gains
        sim: Scenario
        config: Solver settings

    Returns:
        New ScaState with the same multipliers and counters

    Raises:
        SubproblemNonConvergence: If the solver ends farther than
            ``config.max_repair_violation`` from feasibility
    """
    link = _link_gains(gains, sim)
    shapes = (state.phi.shape, state.psi.shape, state.w_bar.shape)
    n, n_rx, n_tx = state.phi.shape[0], state.phi.shape[1], state.psi.shape[1]
    mult = {k: v.copy() for k, v in state.al_multipliers.items()} or _zero_multipliers(n, n_rx, n_tx)
    penalty = config.initial_penalty
    x = _pack(state.phi, state.psi, state.w_bar)
    violation = max_violation(state.phi, state.psi, state.w_bar)
    pg_norm = np.inf

    for _ in range(config.al_max_iter):
        def fun(z):
            phi, psi, w_bar = _unpack(z, shapes)
            value, (g_phi, g_psi, g_w) = _augmented(phi, psi, w_bar, sur, link, sim, mult, penalty)
            return value, _pack(g_phi, g_psi, g_w)

        x, pg_norm = _projected_gradient(x, fun, config.pg_max_iter, config.pg_tolerance)
        phi, psi, w_bar = _unpack(x, shapes)
        res = constraint_residuals(phi, psi, w_bar)
        mult["coupling"] = mult["coupling"] + penalty * res["coupling"]
        for key in _INEQUALITIES:
            mult[key] = np.maximum(0.0, mult[key] + penalty * res[key])
        new_violation = max_violation(phi, psi, w_bar)
        if new_violation <= config.feasibility_tolerance and pg_norm <= config.pg_tolerance:
            violation = new_violation
            break
        if new_violation > 0.25 * violation:
            penalty = min(penalty * 10.0, _MAX_PENALTY)
        violation = new_violation

    phi, psi, w_bar = _unpack(x, shapes)
    if violation > config.max_repair_violation:
        residuals = {"max_violation": violation, "projected_gradient": float(pg_norm)}
        residuals.update(mccormick_residuals(phi, psi, w_bar))
        raise SubproblemNonConvergence(residuals)
    phi, psi, w_bar = _repair(phi, psi, w_bar)

    candidate = state.model_copy(update={"phi": phi, "psi": psi, "w_bar": w_bar, "al_multipliers": mult})
    before = surrogate_objective(state, sur, gains, sim)
    after = surrogate_objective(candidate, sur, gains, sim)
    if after > before:
        logger.debug(f"Subproblem did not improve ({after:.6g} > {before:.6g}); keeping input point")
        return state.model_copy(update={"al_multipliers": mult})
    return candidate


def _relative_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), _TINY)


def fractionality(phi: np.ndarray, psi: np.ndarray) -> float:
    """Mean of x - x^2 over every policy entry; zero exactly on binary policies."""
    values = np.concatenate([phi.ravel(), psi.ravel()])
    return float(np.mean(np.abs(values - values ** 2)))


def binary_candidates(gains: EffectiveGains, state: ScaState, threshold: float) -> List[BinarySelection]:
    """
    Schedules offered to a relaxed iterate that has not left the interior.

    The list holds the all-pairs greedy schedule, the rounded iterate, every
    greedy schedule with one pair switched off and every single pair alone.
    """
    greedy = greedy_nosched(gains)
    candidates = [greedy, round_policy(BeamPolicy(phi=state.phi, psi=state.psi), threshold)]
    for m in range(len(greedy.beams)):
        candidates.append(BinarySelection(beams=[None if k == m else b for k, b in enumerate(greedy.beams)]))
        candidates.append(BinarySelection(beams=[b if k == m else None for k, b in enumerate(greedy.beams)]))
    return candidates


def _binary_jump(state: ScaState, gains: EffectiveGains, sim: SimConfig, config: ScaConfig,
                 eta: float) -> Tuple[ScaState, float]:
    """Replace a fractional iterate by the best binary candidate when it scores a lower objective."""
    n_rx, n_tx = state.phi.shape[1], state.psi.shape[1]
    best = max(binary_candidates(gains, state, config.round_threshold),
               key=lambda sel: selection_wsr(gains, sel, sim))
    policy = selection_to_policy(best, n_rx, n_tx)
    w_bar = policy.phi[:, None, :, None] * policy.psi[None, :, None, :]
    eta_best = true_objective(policy.phi, policy.psi, w_bar, state.theta, state.delta, gains, sim)
    if eta_best >= eta:
        return state, eta
    logger.debug(f"SCA moved to binary schedule {best.beams} ({eta_best:.6g} < {eta:.6g})")
    jumped = state.model_copy(update={"phi": policy.phi, "psi": policy.psi, "w_bar": w_bar, "al_multipliers": {}})
    return jumped, eta_best


def run(gains: EffectiveGains, sim: SimConfig,
        config: Optional[ScaConfig] = None) -> Tuple[BinarySelection, List[ScaTraceRecord], ScaState]:
    """
    Nested SCA: inner surrogate rebuilds until the surrogate value settles,
    outer multiplier ascent until the relaxed objective settles.

    Args:
        gains: Instance gains
        sim: Scenario
        config: Solver settings (defaults when omitted)

    Returns:
        (rounded selection, per-iteration trace, final continuous state)

    Raises:
        SubproblemNonConvergence: Propagated from solve_subproblem
    """
    config = config or ScaConfig()
    n, n_rx, _, n_tx = gains.rho.shape
    state = init_state(n, n_rx, n_tx)
    trace: List[ScaTraceRecord] = []
    iteration = 0
    eta_prev: Optional[float] = None
    eta = true_objective(state.phi, state.psi, state.w_bar, 0.0, 0.0, gains, sim)

    for outer in range(config.max_outer):
        sigma_prev = true_objective(state.phi, state.psi, state.w_bar, state.theta, state.delta, gains, sim)
        for inner in range(config.max_inner):
            sur = taylor_surrogates(state, gains, sim)
            state = solve_subproblem(state, sur, gains, sim, config)
            sigma = surrogate_objective(state, sur, gains, sim)
            state = state.model_copy(update={"inner": inner + 1, "outer": outer, "surrogate": sigma})
            iteration += 1
            trace.append(ScaTraceRecord(
                iteration=iteration, outer=outer, surrogate=sigma, objective=eta,
                theta=state.theta, delta=state.delta,
                max_violation=max_violation(state.phi, state.psi, state.w_bar),
            ))
            logger.debug(f"SCA outer {outer} inner {inner}: surrogate={sigma:.6g}")
            converged = _relative_change(sigma, sigma_prev) <= config.tolerance
            sigma_prev = sigma
            if converged:
                break

        theta = state.theta + config.dual_step * float(np.sum(state.psi * (1.0 - state.psi)))
        delta = state.delta + config.dual_step * float(np.sum(state.phi * (1.0 - state.phi)))
        state = state.model_copy(update={"theta": theta, "delta": delta, "outer": outer + 1})
        eta = true_objective(state.phi, state.psi, state.w_bar, theta, delta, gains, sim)
        if fractionality(state.phi, state.psi) > config.binary_tolerance:
            state, eta = _binary_jump(state, gains, sim, config, eta)
        binary = fractionality(state.phi, state.psi) <= config.binary_tolerance
        if binary and eta_prev is not None and _relative_change(eta, eta_prev) <= config.tolerance:
            break
        eta_prev = eta
    else:
        if fractionality(state.phi, state.psi) > config.binary_tolerance:
            logger.warning(f"SCA reached {config.max_outer} outer rounds with a fractional iterate "
                           f"(mean x - x^2 = {fractionality(state.phi, state.psi):.3e})")

    selection = round_policy(BeamPolicy(phi=state.phi, psi=state.psi), config.round_threshold)
    logger.info(f"SCA finished after {iteration} subproblems: {selection.active_count} active pairs, "
                f"theta={state.theta:.4g}, delta={state.delta:.4g}")
    return selection, trace, state
