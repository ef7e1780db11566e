# Copyright the dwdmqkd-nsca authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License"). You
# may not use this file except in compliance with the License. A copy of
# the License is located at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# or in the "license" file accompanying this file. This file is
# distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF
# ANY KIND, either express or implied. See the License for the specific
# language governing permissions and limitations under the License.

"""The ``dwdmqkd`` command."""

import argparse
import dataclasses
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from dwdmqkd.nsca._version import __version__
from dwdmqkd.nsca.config import ScenarioConfig, StrategyKind, load_scenario
from dwdmqkd.nsca.dataset import generate_dataset, read_dataset, write_dataset
from dwdmqkd.nsca.errors import ConfigError
from dwdmqkd.nsca.features import FeatureSubset
from dwdmqkd.nsca.gbdt import GbdtParams, feature_importance, load_model, persist_model, train
from dwdmqkd.nsca.harness import (
    SWEEP_AXES,
    calibrate_pp,
    evaluate_model,
    metrics_frame,
    run_experiment,
    sweep,
    write_metrics,
)
from dwdmqkd.nsca.traffic import read_trace

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def _scenario_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "workers": args.workers,
        "ts": args.ts,
        "load_erlang": args.load,
        "n_requests": getattr(args, "requests", None),
        "n_repetitions": getattr(args, "repetitions", None),
        "n_sets": getattr(args, "n_sets", None),
        "max_slots": getattr(args, "max_slots", None),
    }


def _load(args: argparse.Namespace) -> ScenarioConfig:
    return load_scenario(args.config, _scenario_overrides(args))


def _gen_dataset(args: argparse.Namespace) -> int:
    scenario = _load(args)
    dataset = generate_dataset(scenario, args.events, FeatureSubset(args.subset))
    write_dataset(dataset, args.out)
    logger.info("Wrote %d rows (%d events) to %s", len(dataset), dataset.n_events, args.out)
    return 0


def _train(args: argparse.Namespace) -> int:
    dataset = read_dataset(args.dataset)
    params = GbdtParams(
        learning_rate=args.learning_rate,
        n_iterations=args.iterations,
        num_leaves=args.num_leaves,
        min_data_in_leaf=args.min_data_in_leaf,
        max_bin=args.max_bin,
        max_depth=args.max_depth,
        seed=args.seed or 0,
        early_stopping_rounds=args.early_stopping,
    )
    valid = read_dataset(args.valid, dataset.schema) if args.valid else None
    model = train(dataset, params, valid=valid)
    persist_model(model, args.out)
    logger.info(
        "Trained %d trees, training RMSE %.6f; model written to %s",
        len(model.trees),
        model.rmse_history[-1] if model.rmse_history else float("nan"),
        args.out,
    )
    if args.importance:
        importance = feature_importance(model)
        with open(args.importance, "w") as f:
            json.dump(dict(zip(dataset.schema.names, importance.tolist())), f, indent=2)
    return 0


def _evaluate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    dataset = read_dataset(args.dataset, model.schema)
    evaluation = evaluate_model(model, dataset)
    report = {
        "rmse": evaluation.rmse,
        "coincident_rate": evaluation.coincident_rate,
        "group_coincident_rate": list(evaluation.group_coincident_rate),
        "group_proportion": list(evaluation.group_proportion),
        "events": evaluation.n_events,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text)
    return 0


def _with_model(scenario: ScenarioConfig, model: Optional[str]) -> ScenarioConfig:
    if model is None:
        return scenario
    strategies = tuple(
        dataclasses.replace(s, model=model)
        if s.kind is StrategyKind.ML_NSCA
        else s
        for s in scenario.strategies
    )
    return scenario.replace(strategies=strategies)


def _simulate(args: argparse.Namespace) -> int:
    scenario = _with_model(_load(args), args.model)
    trace = read_trace(args.trace) if args.trace else None
    results = run_experiment(scenario, trace=trace)
    write_metrics(metrics_frame(results), args.out)
    logger.info("Metrics written to %s", args.out)
    return 0


def _sweep(args: argparse.Namespace) -> int:
    scenario = _with_model(_load(args), args.model)
    values = [float(v) for v in args.values.split(",") if v.strip()] if args.values else []
    if args.axis in ("TS", "qch_count"):
        values = [int(v) for v in values]
    write_metrics(sweep(scenario, args.axis, values), args.out)
    logger.info("Sweep over %s written to %s", args.axis, args.out)
    return 0


def _calibrate_pp(args: argparse.Namespace) -> int:
    scenario = _with_model(_load(args), args.model)
    target = args.target
    if target is None:
        ml = tuple(s for s in scenario.strategies if s.kind is StrategyKind.ML_NSCA)
        if not ml:
            raise ConfigError("Pass --target or list an ML-NSCA strategy in the scenario")
        results = run_experiment(scenario.replace(strategies=ml[:1]))
        target = next(iter(results.values())).reallocations
        logger.info("ML-NSCA made %d reallocations", target)
    calibration = calibrate_pp(scenario, target, args.tolerance)
    report = {
        "threshold_bps": calibration.threshold_bps,
        "reallocations": calibration.count,
        "target": target,
        "iterations": calibration.iterations,
        "converged": calibration.converged,
        "saturated": calibration.saturated,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text)
    return 0


def _scenario_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="Scenario JSON file.")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes.")
    parser.add_argument("--ts", type=int, default=None, help="Reallocation window in slots.")
    parser.add_argument("--load", type=float, default=None, help="Traffic load in Erlang.")


def _simulation_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--requests", type=int, default=None, help="Requests per repetition.")
    parser.add_argument("--repetitions", type=int, default=None, help="Repetitions.")
    parser.add_argument("--max-slots", type=int, default=None, help="Slot cap per repetition.")
    parser.add_argument("--model", default=None, help="Model file for ML-NSCA strategies.")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dwdmqkd",
        description="Quantum channel allocation in dynamic DWDM-QKD networks.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="Root seed of all randomness.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings only.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-dataset", help="Generate a labelled training set.")
    _scenario_arguments(gen)
    gen.add_argument("--events", type=int, required=True, help="Reallocation events to label.")
    gen.add_argument("--subset", choices=[s.value for s in FeatureSubset], default="S4")
    gen.add_argument("--n-sets", type=int, default=None, help="Monte-Carlo futures per event.")
    gen.add_argument("--out", required=True, help="Dataset CSV to write.")
    gen.set_defaults(handler=_gen_dataset)

    fit = commands.add_parser("train", help="Train a model on a dataset.")
    fit.add_argument("--dataset", required=True, help="Training dataset CSV.")
    fit.add_argument("--valid", default=None, help="Validation dataset CSV.")
    fit.add_argument("--out", required=True, help="Model file to write.")
    fit.add_argument("--iterations", type=int, default=500)
    fit.add_argument("--learning-rate", type=float, default=0.1)
    fit.add_argument("--num-leaves", type=int, default=40)
    fit.add_argument("--min-data-in-leaf", type=int, default=20)
    fit.add_argument("--max-bin", type=int, default=100)
    fit.add_argument("--max-depth", type=int, default=None)
    fit.add_argument("--early-stopping", type=int, default=None, help="Patience in rounds.")
    fit.add_argument("--importance", default=None, help="JSON file for feature importance.")
    fit.set_defaults(handler=_train)

    evaluate = commands.add_parser("evaluate", help="Evaluate a model on a test dataset.")
    evaluate.add_argument("--model", required=True, help="Model file.")
    evaluate.add_argument("--dataset", required=True, help="Test dataset CSV.")
    evaluate.add_argument("--out", default=None, help="JSON report. Default: stdout.")
    evaluate.set_defaults(handler=_evaluate)

    run = commands.add_parser("simulate", help="Compare strategies on a scenario.")
    _scenario_arguments(run)
    _simulation_arguments(run)
    run.add_argument("--trace", default=None, help="Request trace CSV to replay.")
    run.add_argument("--out", required=True, help="Metrics CSV to write.")
    run.set_defaults(handler=_simulate)

    sweeps = commands.add_parser("sweep", help="Sweep one scenario parameter.")
    _scenario_arguments(sweeps)
    _simulation_arguments(sweeps)
    sweeps.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweeps.add_argument("--values", default="", help="Comma-separated values.")
    sweeps.add_argument("--out", required=True, help="Metrics CSV to write.")
    sweeps.set_defaults(handler=_sweep)

    calibrate = commands.add_parser("calibrate-pp", help="Calibrate the PP threshold.")
    _scenario_arguments(calibrate)
    _simulation_arguments(calibrate)
    calibrate.add_argument(
        "--target",
        type=int,
        default=None,
        help="Reallocations to match. Default: those of the scenario's ML-NSCA strategy.",
    )
    calibrate.add_argument("--tolerance", type=float, default=0.05)
    calibrate.add_argument("--out", default=None, help="JSON report. Default: stdout.")
    calibrate.set_defaults(handler=_calibrate_pp)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``dwdmqkd`` command; returns the exit code."""
    args = create_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT)
    try:
        return args.handler(args)
    except (ConfigError, ValueError) as e:
        logger.error("%s", e)
        return 2
    except OSError as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
