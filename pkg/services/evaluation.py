"""
Evaluation: runs scheduling methods over datasets, computes weighted sum rate
ratios, and produces sweep, complexity, schedule and histogram data.
"""

import asyncio
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from src.models import (
    BinarySelection,
    Dataset,
    EffectiveGains,
    GraphFeatures,
    MetricsRow,
    ModelParams,
    RatioReport,
    ScaConfig,
    SimConfig,
    StorageMode,
)
from services import baselines, sca
from services.dataset_storage import gen_dataset, generate_one
from services.gblinks import forward
from services.problem import round_policy, selection_wsr

load_dotenv()

logger = logging.getLogger(__name__)


class Method(str, Enum):
    """Scheduling methods the harness can evaluate."""
    GBLINKS = "gblinks"
    GREEDY = "greedy"
    EXHAUSTIVE = "exhaustive"
    SCA = "sca"


def parse_method(name: str) -> Method:
    name = name.lower().strip()
    if name not in [m.value for m in Method]:
        raise ValueError(f"Unknown method: {name}. Must be one of: {[m.value for m in Method]}")
    return Method(name)


def default_threshold() -> float:
    return float(os.getenv("BEAMGRAPH_ROUND_THRESHOLD", "0.5"))


def worker_count() -> int:
    return max(1, int(os.getenv("BEAMGRAPH_THREADS", "1")))


def run_method(method: Method, rho: np.ndarray, kappa: np.ndarray, sim: SimConfig,
               model: Optional[ModelParams] = None, sca_config: Optional[ScaConfig] = None,
               threshold: float = 0.5, budget: Optional[int] = None) -> BinarySelection:
    """
    Produce the binary schedule of one sample.

    Raises:
        ValueError: If gblinks is requested without a matching model
        SearchBudgetExceeded: If an exhaustive search is too large
        SubproblemNonConvergence: If the SCA subproblem solver fails
    """
    gains = EffectiveGains(rho=rho)
    if method == Method.GREEDY:
        return baselines.greedy_nosched(gains)
    if method == Method.EXHAUSTIVE:
        selection, _ = baselines.exhaustive_search(gains, sim, budget)
        return selection
    if method == Method.SCA:
        selection, _, _ = sca.run(gains, sim, sca_config)
        return selection
    if model is None:
        raise ValueError("Method gblinks requires a model")
    if (model.n_tx, model.n_rx) != (sim.n_tx, sim.n_rx):
        raise ValueError(f"Model expects Nt={model.n_tx}, Nr={model.n_rx}; data has Nt={sim.n_tx}, Nr={sim.n_rx}")
    policy = forward(model, GraphFeatures(kappa=kappa))
    return round_policy(policy, threshold)


def evaluate_sample(dataset: Dataset, index: int, method: Method,
                    model: Optional[ModelParams] = None, sca_config: Optional[ScaConfig] = None,
                    threshold: float = 0.5, budget: Optional[int] = None) -> MetricsRow:
    """Run one method on one sample; refusals and solver failures are recorded in ``status``."""
    sim = dataset.config
    sample_id = dataset.stream_ids[index]
    start = time.perf_counter()
    try:
        selection = run_method(method, dataset.rho[index], dataset.kappa[index], sim,
                               model, sca_config, threshold, budget)
    except baselines.SearchBudgetExceeded as e:
        logger.warning(f"Sample {sample_id}: {e}")
        return MetricsRow(sample_id=sample_id, method=method.value, wsr=0.0, active_pairs=0,
                          runtime_ms=(time.perf_counter() - start) * 1000.0, status="refused")
    except sca.SubproblemNonConvergence as e:
        logger.warning(f"Sample {sample_id}: {e}")
        return MetricsRow(sample_id=sample_id, method=method.value, wsr=0.0, active_pairs=0,
                          runtime_ms=(time.perf_counter() - start) * 1000.0, status="failed")
    runtime_ms = (time.perf_counter() - start) * 1000.0
    wsr = selection_wsr(EffectiveGains(rho=dataset.rho[index]), selection, sim)
    return MetricsRow(sample_id=sample_id, method=method.value, wsr=max(wsr, 0.0),
                      active_pairs=selection.active_count, runtime_ms=runtime_ms)


async def evaluate_async(dataset: Dataset, method: Method, model: Optional[ModelParams] = None,
                         sca_config: Optional[ScaConfig] = None, threshold: Optional[float] = None,
                         budget: Optional[int] = None) -> List[MetricsRow]:
    """
    Evaluate every sample on a thread pool capped by BEAMGRAPH_THREADS.

    Returns:
        Rows in sample order
    """
    if method == Method.GBLINKS and model is None:
        raise ValueError("Method gblinks requires a model")
    threshold = default_threshold() if threshold is None else threshold
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        tasks = [
            loop.run_in_executor(pool, partial(evaluate_sample, dataset, i, method, model,
                                               sca_config, threshold, budget))
            for i in range(len(dataset))
        ]
        rows = await asyncio.gather(*tasks)
    logger.info(f"Evaluated {method.value} on {len(rows)} samples, "
                f"mean wsr {np.mean([r.wsr for r in rows]):.4f}")
    return list(rows)


def evaluate(dataset: Dataset, method: Method, model: Optional[ModelParams] = None,
             sca_config: Optional[ScaConfig] = None, threshold: Optional[float] = None,
             budget: Optional[int] = None) -> List[MetricsRow]:
    """Synchronous wrapper of evaluate_async."""
    return asyncio.run(evaluate_async(dataset, method, model, sca_config, threshold, budget))


def compute_ratios(rows_numerator: Sequence[MetricsRow], rows_denominator: Sequence[MetricsRow],
                   threshold: float = 0.9) -> RatioReport:
    """
    Per-sample wsr ratios of two methods.

    0/0 counts as 1; x/0 with x > 0 is flagged and left out of the mean and
    the threshold fraction.

    Raises:
        ValueError: If the two row sets do not cover the same sample ids in the same order
    """
    ids_num = [r.sample_id for r in rows_numerator]
    ids_den = [r.sample_id for r in rows_denominator]
    if ids_num != ids_den:
        raise ValueError(f"Sample ids differ between row sets ({len(ids_num)} vs {len(ids_den)} rows)")
    ratios: List[Optional[float]] = []
    flagged = []
    for num, den in zip(rows_numerator, rows_denominator):
        if den.wsr == 0.0:
            if num.wsr == 0.0:
                ratios.append(1.0)
            else:
                ratios.append(None)
                flagged.append(num.sample_id)
        else:
            ratios.append(num.wsr / den.wsr)
    valid = [r for r in ratios if r is not None]
    return RatioReport(
        sample_ids=ids_num,
        ratios=ratios,
        flagged=flagged,
        mean=float(np.mean(valid)) if valid else float("nan"),
        threshold=threshold,
        fraction_above=float(np.mean([r >= threshold for r in valid])) if valid else 0.0,
    )


def attach_ratios(rows: Sequence[MetricsRow], report: RatioReport) -> List[MetricsRow]:
    """Copy of ``rows`` with the ``ra`` column filled from ``report``."""
    return [row.model_copy(update={"ra": ratio}) for row, ratio in zip(rows, report.ratios)]


def complexity_counts(n_pairs: int, n_tx: int, n_rx: int, n_layers: int = 1) -> Dict[str, int]:
    """Operation counts of the four methods for one instance."""
    d = n_tx * n_rx
    gblinks_ops = (n_layers * n_pairs * (5 * 2 ** 8 * d + 2 ** 10 * n_tx + 23 * 2 ** 13 + 2 ** 6 * (n_tx + n_rx))
                   + 2 ** 7 * n_layers * (n_pairs - 1))
    exhaustive_ops = sum(math.comb(n_pairs, k) * d ** k for k in range(1, n_pairs + 1))
    variables = n_pairs ** 2 * d + n_pairs * n_rx + n_pairs * n_tx
    constraints = 4 * n_pairs ** 2 * d + n_pairs * n_rx + n_pairs * n_tx + 3 * n_pairs
    return {
        "gblinks": gblinks_ops,
        "greedy": n_pairs * d,
        "exhaustive": exhaustive_ops,
        "sca": variables ** 3 * constraints,
    }


def run_sweep(model: ModelParams, base_config: SimConfig, overrides: Sequence[Dict],
              count: int, master_seed: int, reference_model: Optional[ModelParams] = None,
              threshold: Optional[float] = None) -> List[Dict]:
    """
    Evaluate a trained model on modified scenarios.

    Each override may change n_pairs, region_side, d1, d2 or snr_db. Reports
    the mean ratio against greedy (ra2) and, with a reference model, against
    that model (ra3).
    """
    results = []
    for override in overrides:
        data = base_config.model_dump()
        data.update(override)
        if "snr_db" in override:
            data["tx_power"] = None
        if "n_pairs" in override:
            data["weights"] = None
        cfg = SimConfig(**data)
        dataset = gen_dataset(cfg, count, master_seed, StorageMode.SEEDS)
        rows = evaluate(dataset, Method.GBLINKS, model, threshold=threshold)
        greedy_rows = evaluate(dataset, Method.GREEDY)
        entry = {**override, "ra2": compute_ratios(rows, greedy_rows).mean}
        if reference_model is not None:
            ref_rows = evaluate(dataset, Method.GBLINKS, reference_model, threshold=threshold)
            entry["ra3"] = compute_ratios(rows, ref_rows).mean
        logger.info(f"Sweep point {override}: {entry}")
        results.append(entry)
    return results


def export_schedule(dataset: Dataset, index: int, selection: BinarySelection) -> Dict:
    """Positions, active pairs and beam indices of one sample as plot data."""
    cfg = dataset.config
    _, _, topology = generate_one(cfg, dataset.header.master_seed, dataset.stream_ids[index])
    pairs = []
    for m, beam in enumerate(selection.beams):
        pairs.append({
            "pair": m,
            "tx": topology.tx_pos[m].tolist(),
            "rx": topology.rx_pos[m].tolist(),
            "active": beam is not None,
            "rx_beam": None if beam is None else beam[0],
            "tx_beam": None if beam is None else beam[1],
        })
    wsr = selection_wsr(EffectiveGains(rho=dataset.rho[index]), selection, cfg)
    return {"sample_id": dataset.stream_ids[index], "region_side": cfg.region_side, "wsr": wsr, "pairs": pairs}


def wsr_histogram(rows_by_method: Dict[str, Sequence[MetricsRow]], bins: int = 20) -> Dict:
    """Histogram counts of per-sample wsr for several methods on shared bin edges."""
    values = {name: np.array([r.wsr for r in rows]) for name, rows in rows_by_method.items()}
    pooled = np.concatenate(list(values.values())) if values else np.array([0.0])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    return {
        "edges": edges.tolist(),
        "counts": {name: np.histogram(v, bins=edges)[0].tolist() for name, v in values.items()},
    }
