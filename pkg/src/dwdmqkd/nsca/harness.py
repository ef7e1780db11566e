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

"""End-to-end simulation runs, parameter sweeps and model evaluation.

A run plays slots until ``n_requests`` requests have been offered. In every slot
the requests arriving are provisioned first, then the strategy acts, then the key
rate of every MUX link is sampled. Repetition ``r`` of a scenario draws its
traffic from a seed derived from the scenario seed and ``r`` alone, so every
strategy compared at one sweep point sees the same requests.
"""

import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dwdmqkd.nsca.allocation import (
    Calibration,
    calibrate_pp_threshold,
    make_strategy,
    max_key_rate,
    strategy_labels,
)
from dwdmqkd.nsca.config import ScenarioConfig, StrategyConfig, StrategyKind
from dwdmqkd.nsca.dataset import Dataset, generate_datasets
from dwdmqkd.nsca.errors import ConfigError, SchemaMismatchError
from dwdmqkd.nsca.features import FeatureSubset
from dwdmqkd.nsca.gbdt import GbdtModel, GbdtParams, cross_validate, load_model, predict_many, rmse
from dwdmqkd.nsca.network import build_topology, with_uniform_length
from dwdmqkd.nsca.physics import link_key_rate
from dwdmqkd.nsca.traffic import (
    PoissonTraffic,
    Provisioner,
    Request,
    TraceTraffic,
    derive_seed,
)

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "axis",
    "value",
    "strategy",
    "repetitions",
    "mean_skr_bps",
    "ci_half_width_bps",
    "blocking_probability",
    "reallocations",
    "reallocation_events",
    "suspended",
]
SWEEP_AXES = ("TL", "TS", "link_length", "qch_count")
GROUP_EDGES = (0.2, 0.4, 0.6)

_Z_95 = 1.96


def repetition_seed(seed: int, repetition: int) -> int:
    """int: Traffic seed of ``repetition``; independent of the strategy."""
    return derive_seed(seed, repetition)


@dataclass(frozen=True)
class RunMetrics:
    """Outcome of one repetition of one strategy.

    ``mean_skr_bps`` is the mean over MUX links of each link's slot-averaged key
    rate, summed over the link's quantum channels.
    """

    strategy: str
    repetition: int
    mean_skr_bps: float
    link_skr_bps: Dict[int, float]
    blocking_probability: float
    reallocations: int
    reallocation_events: int
    suspended: int
    slots: int
    offered: int
    wall_clock_s: float
    skr_trace: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class ExperimentResult:
    """Repetitions of one strategy and their aggregates."""

    strategy: str
    runs: Tuple[RunMetrics, ...]

    @property
    def repetitions(self) -> int:
        return len(self.runs)

    @property
    def mean_skr_bps(self) -> float:
        """float: Mean of the per-repetition means."""
        return float(np.mean([r.mean_skr_bps for r in self.runs]))

    @property
    def ci_half_width_bps(self) -> float:
        """float: Half-width of the normal 95% interval of :attr:`mean_skr_bps`."""
        if len(self.runs) < 2:
            return 0.0
        spread = np.std([r.mean_skr_bps for r in self.runs], ddof=1)
        return float(_Z_95 * spread / math.sqrt(len(self.runs)))

    @property
    def blocking_probability(self) -> float:
        return float(np.mean([r.blocking_probability for r in self.runs]))

    @property
    def reallocations(self) -> int:
        return sum(r.reallocations for r in self.runs)

    @property
    def reallocation_events(self) -> int:
        return sum(r.reallocation_events for r in self.runs)

    @property
    def suspended(self) -> int:
        return sum(r.suspended for r in self.runs)

    def to_row(self, axis: str = "", value: Any = "") -> Dict[str, Any]:
        return {
            "axis": axis,
            "value": value,
            "strategy": self.strategy,
            "repetitions": self.repetitions,
            "mean_skr_bps": self.mean_skr_bps,
            "ci_half_width_bps": self.ci_half_width_bps,
            "blocking_probability": self.blocking_probability,
            "reallocations": self.reallocations,
            "reallocation_events": self.reallocation_events,
            "suspended": self.suspended,
        }


def simulate(
    scenario: ScenarioConfig,
    strategy: StrategyConfig,
    repetition: int = 0,
    model: Optional[GbdtModel] = None,
    trace: Optional[Sequence[Request]] = None,
    label: Optional[str] = None,
) -> RunMetrics:
    """Runs one repetition of ``scenario`` under ``strategy``.

    Args:
        scenario (ScenarioConfig): The scenario.
        strategy (StrategyConfig): The allocation strategy.
        repetition (int): Repetition index; selects the traffic seed.
        model (Optional[GbdtModel]): Model for ML-NSCA; loaded from the strategy's
            model file when omitted.
        trace (Optional[Sequence[Request]]): Requests to replay instead of Poisson
            arrivals.
        label (Optional[str]): Name reported in the metrics. Default: the kind.

    Returns:
        RunMetrics: Metrics of the repetition.
    """
    started = time.perf_counter()
    network = build_topology(scenario.topology)
    if trace is None:
        traffic = dataclasses.replace(
            scenario.traffic, seed=repetition_seed(scenario.seed, repetition)
        )
        source = PoissonTraffic(traffic, network.n_nodes)
        limit = scenario.slot_limit
    else:
        source = TraceTraffic(trace)
        limit = scenario.max_slots or source.last_slot + 1
    allocator = make_strategy(strategy, scenario.qkd, scenario.traffic.load_erlang, model)
    allocator.initialize(network)
    provisioner = Provisioner()
    mux = [link.index for link in network.mux_links]
    totals = np.zeros(len(mux))
    trace_out: List[float] = []
    moved = events = suspended = 0
    slots = 0
    for slot in range(limit):
        if slot:
            network.advance_timeslot()
        provisioner.serve(network, source.arrivals(slot))
        outcome = allocator.step(network, source.arrivals)
        moved += outcome.moved
        events += outcome.events
        suspended += outcome.suspended
        rates = np.array([link_key_rate(network, i, scenario.qkd) for i in mux])
        totals += rates
        slots += 1
        if scenario.record_trace:
            trace_out.append(float(rates.mean()) if rates.size else 0.0)
        if trace is None and provisioner.offered >= scenario.n_requests:
            break
    per_link = totals / slots if slots else totals
    return RunMetrics(
        strategy=label or strategy.label,
        repetition=repetition,
        mean_skr_bps=float(per_link.mean()) if per_link.size else 0.0,
        link_skr_bps={i: float(v) for i, v in zip(mux, per_link)},
        blocking_probability=provisioner.blocking_probability,
        reallocations=moved,
        reallocation_events=events,
        suspended=suspended,
        slots=slots,
        offered=provisioner.offered,
        wall_clock_s=time.perf_counter() - started,
        skr_trace=tuple(trace_out) if scenario.record_trace else None,
    )


def _simulate_job(args: Tuple[Any, ...]) -> RunMetrics:
    return simulate(*args)


def _load_models(
    strategies: Sequence[StrategyConfig], model: Optional[GbdtModel]
) -> List[Optional[GbdtModel]]:
    models = []
    for strategy in strategies:
        if strategy.kind is not StrategyKind.ML_NSCA:
            models.append(None)
        elif model is not None:
            models.append(model)
        elif strategy.model is None:
            raise ConfigError("ML-NSCA strategy needs a model file")
        else:
            models.append(load_model(strategy.model))
    return models


def run_experiment(
    scenario: ScenarioConfig,
    model: Optional[GbdtModel] = None,
    trace: Optional[Sequence[Request]] = None,
) -> Dict[str, ExperimentResult]:
    """Runs every strategy of ``scenario`` for ``n_repetitions`` paired repetitions.

    Args:
        scenario (ScenarioConfig): The scenario; its strategies are compared.
        model (Optional[GbdtModel]): Model for ML-NSCA strategies; each strategy's
            model file is loaded otherwise.
        trace (Optional[Sequence[Request]]): Requests replayed in every repetition
            instead of Poisson arrivals.

    Returns:
        Dict[str, ExperimentResult]: Results keyed by strategy label, in
        configuration order.
    """
    if not scenario.strategies:
        raise ConfigError("Scenario lists no strategies")
    models = _load_models(scenario.strategies, model)
    labels = strategy_labels(scenario.strategies)
    jobs = [
        (scenario, strategy, repetition, strategy_model, trace, label)
        for strategy, strategy_model, label in zip(scenario.strategies, models, labels)
        for repetition in range(scenario.n_repetitions)
    ]
    logger.info(
        "Running %d strategies x %d repetitions on %s at %.1f Erlang",
        len(labels),
        scenario.n_repetitions,
        scenario.topology.name or "topology",
        scenario.traffic.load_erlang,
    )
    if scenario.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=scenario.workers) as executor:
            runs = list(executor.map(_simulate_job, jobs))
    else:
        runs = [_simulate_job(job) for job in jobs]
    results = {}
    for label in labels:
        mine = sorted((r for r in runs if r.strategy == label), key=lambda r: r.repetition)
        results[label] = ExperimentResult(label, tuple(mine))
        logger.info(
            "%s: mean SKR %.2f +/- %.2f bps, blocking %.4f, %d reallocations",
            label,
            results[label].mean_skr_bps,
            results[label].ci_half_width_bps,
            results[label].blocking_probability,
            results[label].reallocations,
        )
    return results


def apply_axis(scenario: ScenarioConfig, axis: str, value: Any) -> ScenarioConfig:
    """ScenarioConfig: ``scenario`` with the sweep parameter ``axis`` set to ``value``."""
    if axis == "TL":
        traffic = dataclasses.replace(scenario.traffic, load_erlang=float(value))
        return scenario.replace(traffic=traffic)
    if axis == "TS":
        strategies = tuple(dataclasses.replace(s, ts=int(value)) for s in scenario.strategies)
        return scenario.replace(ts=int(value), strategies=strategies)
    if axis == "link_length":
        return scenario.replace(topology=with_uniform_length(scenario.topology, float(value)))
    if axis == "qch_count":
        strategies = tuple(
            dataclasses.replace(s, qch_count=int(value)) for s in scenario.strategies
        )
        return scenario.replace(strategies=strategies)
    raise ValueError(f"Unknown sweep axis {axis}; expected one of {', '.join(SWEEP_AXES)}")


def sweep(
    scenario: ScenarioConfig,
    axis: str,
    values: Sequence[Any],
    model: Optional[GbdtModel] = None,
) -> pd.DataFrame:
    """One metrics row per (axis value, strategy), with paired seeds per value.

    Returns:
        pd.DataFrame: Columns :data:`METRICS_COLUMNS`; header only for no values.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"Unknown sweep axis {axis}; expected one of {', '.join(SWEEP_AXES)}")
    rows = []
    for value in values:
        point = apply_axis(scenario, axis, value)
        logger.info("Sweep %s = %s", axis, value)
        for result in run_experiment(point, model).values():
            rows.append(result.to_row(axis, value))
    return pd.DataFrame(rows, columns=METRICS_COLUMNS)


def metrics_frame(results: Mapping[str, ExperimentResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in results.values()], columns=METRICS_COLUMNS)


def write_metrics(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, columns=METRICS_COLUMNS)


@dataclass(frozen=True)
class ModelEvaluation:
    """Quality of a model on a labelled test set.

    Groups 1..4 hold the events whose gap between the best and second-best label
    is below 20%, within 20-40%, within 40-60% and above 60%.
    """

    rmse: float
    coincident_rate: float
    group_coincident_rate: Tuple[float, float, float, float]
    group_proportion: Tuple[float, float, float, float]
    n_events: int


def _label_gap(labels: np.ndarray) -> float:
    ordered = np.sort(labels)[::-1]
    return float(ordered[0] - (ordered[1] if ordered.size > 1 else 0.0))


def event_group(labels: np.ndarray) -> int:
    """int: Test group (1-4) of an event from its candidates' labels."""
    gap = _label_gap(labels)
    if gap < GROUP_EDGES[0]:
        return 1
    if gap <= GROUP_EDGES[1]:
        return 2
    if gap <= GROUP_EDGES[2]:
        return 3
    return 4


def _argmax_channel(scores: np.ndarray, channels: np.ndarray) -> int:
    best = scores.max()
    return int(channels[scores == best].min())


def evaluate_model(model: GbdtModel, dataset: Dataset) -> ModelEvaluation:
    """RMSE and coincident rates of ``model`` on ``dataset``.

    An event coincides when the channel with the highest prediction equals the
    channel with the highest label, both with ties to the lowest channel.
    """
    if len(dataset) == 0:
        raise ValueError("Cannot evaluate on an empty dataset")
    if model.schema is not None:
        model.schema.check(dataset.schema)
    predicted = predict_many(model, dataset.features)
    channels = dataset.features[:, -1]
    hits = np.zeros(4)
    sizes = np.zeros(4)
    for rows in dataset.event_groups():
        labels = dataset.p_opt[rows]
        group = event_group(labels) - 1
        sizes[group] += 1
        expected = _argmax_channel(labels, channels[rows])
        hits[group] += _argmax_channel(predicted[rows], channels[rows]) == expected
    total = sizes.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        group_rates = np.where(sizes > 0, hits / sizes, np.nan)
    return ModelEvaluation(
        rmse=rmse(predicted, dataset.p_opt),
        coincident_rate=float(hits.sum() / total),
        group_coincident_rate=tuple(float(v) for v in group_rates),
        group_proportion=tuple(float(v) for v in sizes / total),
        n_events=int(total),
    )


def compare_subsets(
    scenario: ScenarioConfig,
    n_events: int,
    params: GbdtParams = GbdtParams(),
    folds: int = 10,
    subsets: Sequence[FeatureSubset] = tuple(FeatureSubset),
) -> Dict[FeatureSubset, List[float]]:
    """Cross-validated RMSE per fold of a model per feature subset, on shared events."""
    datasets = generate_datasets(scenario, n_events, subsets)
    scores = {}
    for subset, data in datasets.items():
        scores[subset] = cross_validate(data, params, folds, scenario.seed)
        logger.info("%s: mean RMSE %.6f", subset.value, float(np.mean(scores[subset])))
    return scores


def transfer_rmse(model: GbdtModel, datasets: Mapping[str, Dataset]) -> Dict[str, float]:
    """RMSE of ``model`` on datasets generated in other scenarios, by name.

    Raises ``SchemaMismatchError`` when a dataset's layout differs, which is always
    the case for S1 across topologies.
    """
    scores = {}
    for name, data in datasets.items():
        if model.schema is not None:
            try:
                model.schema.check(data.schema)
            except SchemaMismatchError as e:
                raise SchemaMismatchError(
                    f"Model with subset {model.schema.subset.value} cannot be applied to {name}:"
                    f" {e}"
                ) from e
        scores[name] = rmse(predict_many(model, data.features), data.p_opt)
    return scores


def calibrate_pp(
    scenario: ScenarioConfig,
    target: int,
    tolerance: float = 0.05,
    strategy: Optional[StrategyConfig] = None,
) -> Calibration:
    """PP threshold matching ``target`` reallocations over the scenario's repetitions.

    Every trial replays the same repetition seeds. The PP strategy defaults to the
    scenario's own PP entry, or a single-channel PP at the scenario's window.
    """
    base = strategy or next(
        (s for s in scenario.strategies if s.kind is StrategyKind.PP),
        StrategyConfig(StrategyKind.PP, ts=scenario.ts),
    )

    def count(threshold: float) -> int:
        pp = dataclasses.replace(base, threshold_bps=threshold)
        results = run_experiment(scenario.replace(strategies=(pp,)))
        return next(iter(results.values())).reallocations

    network = build_topology(scenario.topology)
    upper = 1.01 * max_key_rate(network, scenario.qkd) + 1.0
    return calibrate_pp_threshold(count, target, upper, tolerance)
