"""
Tests for the evaluation harness.
"""

import math
import os
from unittest.mock import patch

import numpy as np
import pytest

from src.models import MetricsRow, ScaConfig, SimConfig
from services import sca
from services.dataset_storage import gen_dataset
from services.evaluation import (
    Method,
    attach_ratios,
    complexity_counts,
    compute_ratios,
    evaluate,
    evaluate_async,
    evaluate_sample,
    export_schedule,
    parse_method,
    run_method,
    run_sweep,
    worker_count,
    wsr_histogram,
)
from services.gblinks import init_params
from services.rng import seed_from

SMALL = dict(message_hidden=(16,), agg_width=8, policy_hidden=(16, 8))


def make_dataset(n_pairs: int = 2, count: int = 4, seed: int = 3):
    config = SimConfig(n_pairs=n_pairs, n_tx=2, n_rx=2, region_side=60.0, d1=5.0, d2=30.0, snr_db=10.0)
    return gen_dataset(config, count, seed)


def make_model(seed: int = 0):
    return init_params(2, 2, 1, seed_from(seed, 0), **SMALL)


def rows(wsrs, method="a"):
    return [MetricsRow(sample_id=i, method=method, wsr=w, active_pairs=1, runtime_ms=0.0)
            for i, w in enumerate(wsrs)]


class TestMethods:
    """Test method parsing and single-sample runs."""

    def test_parse_method(self):
        assert parse_method(" Exhaustive ") == Method.EXHAUSTIVE

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="Unknown method: random"):
            parse_method("random")

    def test_gblinks_requires_model(self):
        dataset = make_dataset()
        with pytest.raises(ValueError, match="requires a model"):
            run_method(Method.GBLINKS, dataset.rho[0], dataset.kappa[0], dataset.config)

    def test_gblinks_antenna_mismatch(self):
        dataset = make_dataset()
        model = init_params(3, 2, 1, seed_from(0, 0), **SMALL)
        with pytest.raises(ValueError, match="Model expects"):
            run_method(Method.GBLINKS, dataset.rho[0], dataset.kappa[0], dataset.config, model)

    def test_greedy_activates_every_pair(self):
        dataset = make_dataset(n_pairs=3)
        row = evaluate_sample(dataset, 0, Method.GREEDY)
        assert row.active_pairs == 3
        assert row.status == "ok"
        assert row.runtime_ms >= 0.0

    def test_budget_refusal_recorded(self):
        dataset = make_dataset(n_pairs=3, count=2)
        result = evaluate(dataset, Method.EXHAUSTIVE, budget=10)
        assert [r.status for r in result] == ["refused", "refused"]
        assert all(r.wsr == 0.0 for r in result)

    def test_sca_failure_recorded(self):
        dataset = make_dataset(count=1)
        with patch.object(sca, "run", side_effect=sca.SubproblemNonConvergence({"max_violation": 0.5})):
            row = evaluate_sample(dataset, 0, Method.SCA, sca_config=ScaConfig())
        assert row.status == "failed"


class TestEvaluate:
    """Test dataset-level evaluation."""

    def test_exhaustive_dominates(self):
        dataset = make_dataset(count=5)
        model = make_model()
        best = evaluate(dataset, Method.EXHAUSTIVE)
        for method in (Method.GREEDY, Method.GBLINKS):
            other = evaluate(dataset, method, model)
            for a, b in zip(best, other):
                assert a.wsr >= b.wsr - 1e-12

    def test_rows_in_sample_order(self):
        dataset = make_dataset(count=6)
        with patch.dict(os.environ, {"BEAMGRAPH_THREADS": "4"}):
            assert worker_count() == 4
            result = evaluate(dataset, Method.GREEDY)
        assert [r.sample_id for r in result] == list(range(6))

    def test_gblinks_deterministic(self):
        dataset = make_dataset()
        model = make_model(seed=2)
        a = evaluate(dataset, Method.GBLINKS, model)
        b = evaluate(dataset, Method.GBLINKS, model)
        assert [(r.wsr, r.active_pairs) for r in a] == [(r.wsr, r.active_pairs) for r in b]

    async def test_async_matches_sync(self):
        dataset = make_dataset(count=3)
        result = await evaluate_async(dataset, Method.GREEDY)
        assert [r.wsr for r in result] == [evaluate_sample(dataset, i, Method.GREEDY).wsr for i in range(3)]

    async def test_async_requires_model(self):
        with pytest.raises(ValueError, match="requires a model"):
            await evaluate_async(make_dataset(), Method.GBLINKS)


class TestRatios:
    """Test weighted sum rate ratios."""

    def test_identical_rows(self):
        report = compute_ratios(rows([1.0, 2.0, 3.0]), rows([1.0, 2.0, 3.0]))
        assert report.ratios == [1.0, 1.0, 1.0]
        assert report.mean == 1.0
        assert report.fraction_above == 1.0

    def test_zero_over_zero_is_one(self):
        report = compute_ratios(rows([0.0, 1.0]), rows([0.0, 2.0]))
        assert report.ratios == [1.0, 0.5]
        assert report.mean == pytest.approx(0.75)
        assert report.fraction_above == 0.5

    def test_positive_over_zero_flagged(self):
        report = compute_ratios(rows([1.0, 1.0]), rows([0.0, 1.0]))
        assert report.ratios == [None, 1.0]
        assert report.flagged == [0]
        assert report.mean == 1.0

    def test_all_flagged(self):
        report = compute_ratios(rows([1.0]), rows([0.0]))
        assert math.isnan(report.mean)
        assert report.fraction_above == 0.0

    def test_sample_mismatch(self):
        with pytest.raises(ValueError, match="Sample ids differ"):
            compute_ratios(rows([1.0, 2.0]), rows([1.0]))

    def test_attach(self):
        report = compute_ratios(rows([1.0, 3.0]), rows([2.0, 3.0]))
        attached = attach_ratios(rows([1.0, 3.0]), report)
        assert [r.ra for r in attached] == [0.5, 1.0]


class TestComplexity:
    """Test operation counts."""

    def test_reference_scenario(self):
        counts = complexity_counts(20, 16, 16, 1)
        assert counts["gblinks"] == 10_692_992
        assert counts["greedy"] == 5_120
        assert counts["sca"] == pytest.approx(4.4887e20, rel=1e-4)

    def test_exhaustive_closed_form(self):
        for n, nt, nr in [(1, 2, 2), (2, 2, 3), (3, 4, 4), (5, 2, 2)]:
            assert complexity_counts(n, nt, nr)["exhaustive"] == (nt * nr + 1) ** n - 1

    def test_gblinks_linear_in_layers(self):
        one, three = complexity_counts(10, 4, 4, 1), complexity_counts(10, 4, 4, 3)
        assert three["gblinks"] == 3 * one["gblinks"]


class TestPlotData:
    """Test sweep, schedule and histogram outputs."""

    def test_export_schedule(self):
        dataset = make_dataset(n_pairs=3)
        selection = run_method(Method.GREEDY, dataset.rho[1], dataset.kappa[1], dataset.config)
        data = export_schedule(dataset, 1, selection)
        assert data["sample_id"] == 1
        assert len(data["pairs"]) == 3
        assert all(p["active"] and len(p["tx"]) == 2 for p in data["pairs"])
        assert [(p["rx_beam"], p["tx_beam"]) for p in data["pairs"]] == selection.beams
        assert data["wsr"] == pytest.approx(evaluate_sample(dataset, 1, Method.GREEDY).wsr)

    def test_wsr_histogram(self):
        hist = wsr_histogram({"a": rows([0.0, 1.0, 2.0]), "b": rows([2.0, 4.0])}, bins=4)
        assert len(hist["edges"]) == 5
        assert sum(hist["counts"]["a"]) == 3
        assert sum(hist["counts"]["b"]) == 2

    def test_sweep(self):
        base = SimConfig(n_pairs=2, n_tx=2, n_rx=2, region_side=60.0, d1=5.0, d2=30.0, snr_db=10.0)
        model = make_model()
        result = run_sweep(model, base, [{"n_pairs": 3}, {"snr_db": 20.0}], 2, 7, reference_model=model)
        assert [entry.get("n_pairs") for entry in result] == [3, None]
        for entry in result:
            assert np.isfinite(entry["ra2"])
            assert entry["ra3"] == 1.0
