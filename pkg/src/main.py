"""
Command-line entry point for the beamgraph toolkit.

Subcommands generate datasets, train GBLinks models, evaluate and compare
scheduling methods, check gradients, run the SCA solver and emit plot data.
Exit codes: 0 success, 2 invalid arguments, 1 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from src.models import (
    DualMultipliers,
    EffectiveGains,
    GraphFeatures,
    OptimizerName,
    ScaConfig,
    SimConfig,
    StorageMode,
    TrainConfig,
)
from services import sca
from services.dataset_storage import FileFormatError, gen_dataset, generate_one, load_dataset
from services.evaluation import (
    Method,
    attach_ratios,
    complexity_counts,
    compute_ratios,
    evaluate,
    export_schedule,
    parse_method,
    run_method,
    run_sweep,
    wsr_histogram,
)
from services.gblinks import count_parameters, init_params
from services.grad_engine import finite_diff_check
from services.ldlf import train
from services.model_storage import load_model, save_model
from services.report_storage import (
    write_json,
    write_metrics_csv,
    write_sca_trace_csv,
    write_train_report_csv,
)
from services.rng import seed_from

load_dotenv()

logger = logging.getLogger(__name__)

# Stream ids reserved for draws that are not dataset samples.
MODEL_INIT_STREAM = 2**64 - 1
GRAD_CHECK_STREAM = 2**64 - 2
GRAD_CHECK_PICK_STREAM = 2**64 - 3

METHOD_NAMES = [m.value for m in Method]


def _method_list(value: str) -> List[Method]:
    try:
        methods = [parse_method(name) for name in value.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))
    if len(methods) != 2:
        raise argparse.ArgumentTypeError(f"Expected two comma-separated methods, got {value!r}")
    return methods


def _u64(value: str) -> int:
    seed = int(value, 0)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(f"Seed must be an unsigned 64-bit integer, got {value}")
    return seed


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise OSError(f"Failed to read {path}: {e}")


def _load_model_for(method: Method, path: Optional[str]):
    if method != Method.GBLINKS:
        return None
    if not path:
        raise ValueError("Method gblinks requires --model")
    return load_model(path)


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = SimConfig.model_validate(_load_json(args.config))
    mode = StorageMode.TENSORS if args.tensors else StorageMode.SEEDS
    gen_dataset(config, args.count, args.seed, mode, args.out)
    logger.info(f"Wrote {args.count} samples to {args.out} ({mode.value} mode)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    cfg = dataset.config
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        eps_lambda=args.dual_step,
        eps_mu=args.dual_step,
        eps_nu=args.dual_step,
        eps_xi=args.dual_step,
        eps_rho=args.dual_step,
        seed=args.seed,
        reproducible_mode=not args.fast,
        shuffle=args.shuffle,
        optimizer=OptimizerName(args.optimizer),
    )
    model = init_params(cfg.n_tx, cfg.n_rx, args.layers, seed_from(args.seed, MODEL_INIT_STREAM))
    logger.info(f"Training GBLinks with {count_parameters(model)} parameters on {len(dataset)} samples")
    model, report = train(dataset, model, config)
    save_model(model, args.out_model)
    report_path = args.report or str(Path(args.out_model).with_suffix(".csv"))
    write_train_report_csv(report, report_path)
    logger.info(f"Model written to {args.out_model}, training report to {report_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    method = Method(args.method)
    dataset = load_dataset(args.data)
    model = _load_model_for(method, args.model)
    rows = evaluate(dataset, method, model, threshold=args.threshold, budget=args.budget)
    write_metrics_csv(rows, args.out)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    first, second = args.methods
    dataset = load_dataset(args.data)
    rows_a = evaluate(dataset, first, _load_model_for(first, args.model),
                      threshold=args.threshold, budget=args.budget)
    rows_b = evaluate(dataset, second, _load_model_for(second, args.model),
                      threshold=args.threshold, budget=args.budget)
    report = compute_ratios(rows_a, rows_b, args.ratio_threshold)
    write_metrics_csv(attach_ratios(rows_a, report) + rows_b, args.out)
    logger.info(f"ra({first.value}/{second.value}): mean {report.mean:.4f}, "
                f"{report.fraction_above:.2%} of samples >= {report.threshold}, {len(report.flagged)} flagged")
    if args.hist:
        write_json(wsr_histogram({first.value: rows_a, second.value: rows_b}, args.bins), args.hist)
    return 0


def cmd_check_grad(args: argparse.Namespace) -> int:
    config = SimConfig(n_pairs=3, n_tx=4, n_rx=4, region_side=100.0, d1=5.0, d2=30.0, snr_db=10.0)
    rho, kappa, _ = generate_one(config, args.seed, 0)
    rng = seed_from(args.seed, GRAD_CHECK_STREAM)
    model = init_params(config.n_tx, config.n_rx, args.layers, rng)
    n, nt, nr = config.n_pairs, config.n_tx, config.n_rx
    duals = DualMultipliers(lam=np.full((n, nt), 0.1), mu=np.full((n, nr), 0.1), nu=np.full(n, 0.1),
                            xi=np.full(n, 0.1), rho_dual=np.full(n, 0.1))
    report = finite_diff_check(model, GraphFeatures(kappa=kappa), EffectiveGains(rho=rho), duals, config,
                               args.step, args.count, seed_from(args.seed, GRAD_CHECK_PICK_STREAM))
    print(report.model_dump_json(indent=2))
    if report.max_rel_err > args.tolerance:
        logger.error(f"Gradient check failed: max relative error {report.max_rel_err:.3g} > {args.tolerance}")
        return 1
    return 0


def cmd_solve_sca(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    config = ScaConfig(dual_step=args.dual_step, tolerance=args.tolerance)
    rows = evaluate(dataset, Method.SCA, sca_config=config)
    write_metrics_csv(rows, args.out)
    if args.trace:
        if not 0 <= args.sample < len(dataset):
            raise ValueError(f"Sample index {args.sample} out of range [0, {len(dataset)})")
        _, trace, _ = sca.run(EffectiveGains(rho=dataset.rho[args.sample]), dataset.config, config)
        write_sca_trace_csv(trace, args.trace)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    reference = load_model(args.ref_model) if args.ref_model else None
    base = SimConfig.model_validate(_load_json(args.config))
    overrides = _load_json(args.overrides)
    if not isinstance(overrides, list):
        raise ValueError(f"{args.overrides} must hold a JSON list of overrides")
    results = run_sweep(model, base, overrides, args.count, args.seed, reference)
    write_json(results, args.out)
    return 0


def cmd_complexity(args: argparse.Namespace) -> int:
    counts = complexity_counts(args.n, args.nt, args.nr, args.k)
    print(json.dumps(counts, indent=2))
    return 0


def cmd_export_schedule(args: argparse.Namespace) -> int:
    method = Method(args.method)
    dataset = load_dataset(args.data)
    if not 0 <= args.sample < len(dataset):
        raise ValueError(f"Sample index {args.sample} out of range [0, {len(dataset)})")
    model = _load_model_for(method, args.model)
    selection = run_method(method, dataset.rho[args.sample], dataset.kappa[args.sample], dataset.config,
                           model, threshold=args.threshold)
    data = export_schedule(dataset, args.sample, selection)
    data["method"] = method.value
    write_json(data, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamgraph", description="mmWave beam selection and link activation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a dataset file")
    p.add_argument("--config", required=True, help="SimConfig JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=_u64, required=True)
    p.add_argument("--tensors", action="store_true", help="Store tensors instead of stream ids")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="Train a GBLinks model with the Lagrangian dual loop")
    p.add_argument("--data", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dual-step", type=float, default=1e-6)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--optimizer", choices=[o.value for o in OptimizerName], default=OptimizerName.ADAM.value)
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--fast", action="store_true", help="Parallel batch gradients (not bit-reproducible)")
    p.add_argument("--report", help="Training report CSV (defaults next to the model)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate one method on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=METHOD_NAMES)
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--budget", type=int)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("compare", help="Evaluate two methods and emit per-sample ratios")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", required=True, type=_method_list, help=f"Two of {METHOD_NAMES}, e.g. gblinks,greedy")
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--budget", type=int)
    p.add_argument("--ratio-threshold", type=float, default=0.9)
    p.add_argument("--hist", help="Write wsr histogram JSON here")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("check-grad", help="Finite-difference check of the analytic gradient")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(handler=cmd_check_grad)

    p = sub.add_parser("solve-sca", help="Run the SCA solver on every sample")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="Iteration trace CSV of one sample")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--dual-step", type=float, default=1.0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(handler=cmd_solve_sca)

    p = sub.add_parser("sweep", help="Evaluate a trained model on modified scenarios")
    p.add_argument("--model", required=True)
    p.add_argument("--ref-model")
    p.add_argument("--config", required=True, help="Base SimConfig JSON file")
    p.add_argument("--overrides", required=True, help="JSON list of SimConfig field overrides")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("complexity", help="Print operation counts of all methods")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--nr", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(handler=cmd_complexity)

    p = sub.add_parser("export-schedule", help="Write positions and selected beams of one sample")
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--method", required=True, choices=METHOD_NAMES)
    p.add_argument("--model")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export_schedule)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=os.getenv("BEAMGRAPH_LOG_LEVEL", "INFO").upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except FileFormatError as e:
        logger.error(f"Unreadable input file: {e}")
        return 1
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        return 2
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
