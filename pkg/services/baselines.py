"""
Reference schedulers: exact exhaustive search and the interference-blind greedy
beam choice (every pair active on its strongest direct beam pair).
"""

import itertools
import logging
import os
from typing import Iterator, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from src.models import BinarySelection, EffectiveGains, SimConfig
from services.problem import batch_weighted_sum_rate, split_gains

load_dotenv()

logger = logging.getLogger(__name__)

CHUNK_SIZE = 4096


class SearchBudgetExceeded(ValueError):
    """Raised when an exhaustive search would visit more options than allowed."""

    def __init__(self, option_count: int, budget: int):
        self.option_count = option_count
        self.budget = budget
        super().__init__(f"Exhaustive search over {option_count} options exceeds budget of {budget}")


def default_budget() -> int:
    return int(float(os.getenv("BEAMGRAPH_EXHAUSTIVE_BUDGET", "1e8")))


class OptionIterator:
    """
    Mixed-radix enumeration of schedules.

    Each pair takes one of Nr*Nt + 1 codes: 0 is inactive, 1 + r*Nt + t is
    active on beams (r, t). The first pair is the most significant digit.
    """

    def __init__(self, n_pairs: int, n_rx: int, n_tx: int):
        self.n_pairs = n_pairs
        self.n_rx = n_rx
        self.n_tx = n_tx
        self.radix = n_rx * n_tx + 1

    def __len__(self) -> int:
        return self.radix ** self.n_pairs

    def codes(self) -> Iterator[Tuple[int, ...]]:
        return itertools.product(range(self.radix), repeat=self.n_pairs)

    def decode(self, code: int) -> Optional[Tuple[int, int]]:
        if code == 0:
            return None
        return divmod(code - 1, self.n_tx)

    def to_selection(self, codes: Tuple[int, ...]) -> BinarySelection:
        return BinarySelection(beams=[self.decode(int(c)) for c in codes])

    def __iter__(self) -> Iterator[BinarySelection]:
        for codes in self.codes():
            yield self.to_selection(codes)

    def option_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-code receive and transmit selection rows, shapes (radix, Nr) and (radix, Nt)."""
        phi_rows = np.zeros((self.radix, self.n_rx))
        psi_rows = np.zeros((self.radix, self.n_tx))
        for code in range(1, self.radix):
            r, t = self.decode(code)
            phi_rows[code, r] = 1.0
            psi_rows[code, t] = 1.0
        return phi_rows, psi_rows


def greedy_nosched(gains: EffectiveGains) -> BinarySelection:
    """Activate every pair on argmax_{r,t} rho[m, r, m, t] (lowest r, then t, on ties)."""
    direct, _ = split_gains(gains.rho)
    n, _, n_tx = direct.shape
    best = np.argmax(direct.reshape(n, -1), axis=1)
    return BinarySelection(beams=[divmod(int(b), n_tx) for b in best])


def exhaustive_search(gains: EffectiveGains, config: SimConfig,
                      budget: Optional[int] = None) -> Tuple[BinarySelection, float]:
    """
    Maximize the weighted sum rate over every binary schedule.

    Candidates are scored in vectorized chunks; the first maximizer in
    enumeration order is kept.

    Args:
        gains: Gain tensor of the instance
        config: Scenario (power, noise, weights)
        budget: Maximum option count (BEAMGRAPH_EXHAUSTIVE_BUDGET by default)

    Returns:
        (best selection, its weighted sum rate)

    Raises:
        SearchBudgetExceeded: If (Nr*Nt + 1)^N exceeds the budget
    """
    n, n_rx, _, n_tx = gains.rho.shape
    options = OptionIterator(n, n_rx, n_tx)
    limit = default_budget() if budget is None else budget
    if len(options) > limit:
        raise SearchBudgetExceeded(len(options), limit)

    phi_rows, psi_rows = options.option_tables()
    weights = config.weight_vector()
    best_wsr, best_codes = -np.inf, None
    codes_iter = options.codes()
    while True:
        chunk = list(itertools.islice(codes_iter, CHUNK_SIZE))
        if not chunk:
            break
        codes = np.array(chunk, dtype=np.int64)
        wsr = batch_weighted_sum_rate(gains.rho, phi_rows[codes], psi_rows[codes],
                                      config.tx_power, config.noise_power, weights)
        i = int(np.argmax(wsr))
        if wsr[i] > best_wsr:
            best_wsr, best_codes = float(wsr[i]), chunk[i]
    logger.debug(f"Exhaustive search scored {len(options)} options, best wsr {best_wsr:.4f}")
    return options.to_selection(best_codes), best_wsr
