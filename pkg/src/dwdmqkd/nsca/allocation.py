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

"""Quantum channel allocation strategies.

* FB pins the quantum channels of every MUX link to the lowest channels.
* PP checks the key rate of every quantum channel each slot and, below a
  threshold, moves it to the channel with the least noise.
* ML-NSCA reallocates every ``ts`` slots to the channels a trained model rates
  most likely to be best over the next window.
* Oracle reallocates every ``ts`` slots with full knowledge of the coming traffic.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dwdmqkd.nsca.config import StrategyConfig, StrategyKind
from dwdmqkd.nsca.dataset import ArrivalSource, best_candidate
from dwdmqkd.nsca.errors import ChannelStateError, ConfigError, SchemaMismatchError
from dwdmqkd.nsca.features import FeatureSubset, extract_candidates, feature_schema
from dwdmqkd.nsca.gbdt import GbdtModel, load_model, predict_many
from dwdmqkd.nsca.network import Network
from dwdmqkd.nsca.physics import (
    QkdParams,
    evaluate_link_skr,
    gain_and_qber,
    link_loss_db,
    noise_breakdown,
    skr_gllp,
)

logger = logging.getLogger(__name__)

__all__ = [
    "AllocationStrategy",
    "Calibration",
    "FixedBandStrategy",
    "Keep",
    "MlNscaStrategy",
    "OracleStrategy",
    "PerformancePredictingStrategy",
    "Reallocate",
    "ReallocationOutcome",
    "StepOutcome",
    "StrategyConfig",
    "StrategyKind",
    "calibrate_pp_threshold",
    "fb_allocate",
    "make_strategy",
    "max_key_rate",
    "ml_nsca_reallocate",
    "oracle_allocate",
    "pp_step",
]

_MAX_BISECTIONS = 40


@dataclass(frozen=True)
class Keep:
    """PP decision: the quantum channel stays where it is."""


@dataclass(frozen=True)
class Reallocate:
    """PP decision: move the quantum channel to ``channel``."""

    channel: int


@dataclass(frozen=True)
class StepOutcome:
    """What one strategy step did.

    ``moved`` counts quantum channels that changed channel, ``events`` counts
    reallocation procedures run and ``suspended`` counts quantum channels left
    without a channel for the coming window.
    """

    moved: int = 0
    events: int = 0
    suspended: int = 0


@dataclass(frozen=True)
class ReallocationOutcome:
    assignments: Dict[int, Tuple[int, ...]]
    moved: int
    suspended: int


def fb_allocate(network: Network, qch_count: int = 1) -> Dict[int, Tuple[int, ...]]:
    """Places quantum channels on channels ``1..qch_count`` of every MUX link.

    Returns:
        Dict[int, Tuple[int, ...]]: Channels of every MUX link.
    """
    if not 1 <= qch_count <= network.n_channels:
        raise ValueError(f"qch_count must lie in 1..{network.n_channels}, got {qch_count}")
    assignment = {}
    for link in network.mux_links:
        held = set(network.quantum_channels(link.index))
        for channel in range(1, qch_count + 1):
            if channel not in held:
                network.place_quantum(link.index, channel)
        assignment[link.index] = network.quantum_channels(link.index)
    return assignment


def total_noise_w(network: Network, link: int, channel: int, params: QkdParams) -> float:
    """float: Noise power reaching a quantum detector on ``channel`` of ``link``."""
    return noise_breakdown(network, link, channel, params).total_w


def pp_step(
    network: Network,
    link: int,
    threshold_bps: float,
    params: QkdParams,
    current: Optional[int] = None,
) -> Union[Keep, Reallocate]:
    """Per-slot check of one quantum channel.

    The channel is kept while its key rate meets ``threshold_bps``. Otherwise the
    current channel and every Free channel are ranked by total noise, lowest index
    first on ties, and the quantum channel moves to the winner. The network is not
    modified.

    Args:
        network (Network): Current occupancy.
        link (int): MUX link.
        threshold_bps (float): Key-rate requirement.
        params (QkdParams): Physical constants.
        current (Optional[int]): The quantum channel to check. Default: the link's
            only quantum channel.

    Returns:
        Union[Keep, Reallocate]: The decision.
    """
    if current is None:
        held = network.quantum_channels(link)
        if len(held) != 1:
            raise ChannelStateError(f"Link {link} holds {len(held)} quantum channels, pass one")
        current = held[0]
    if evaluate_link_skr(network, link, current, params).rate_bps >= threshold_bps:
        return Keep()
    candidates = sorted({current, *network.available_channels(link)})
    noise = [total_noise_w(network, link, ch, params) for ch in candidates]
    best = candidates[int(np.argmin(noise))]
    if best == current:
        return Keep()
    return Reallocate(best)


def max_key_rate(network: Network, params: QkdParams) -> float:
    """float: Key rate of the shortest MUX link without any classical noise."""
    lengths = [link.length_km for link in network.mux_links]
    if not lengths:
        return 0.0
    loss = link_loss_db(min(lengths), params)
    gain, qber = gain_and_qber(loss, 0.0, params)
    return skr_gllp(gain, qber, loss, 0.0, params)


@dataclass(frozen=True)
class Calibration:
    threshold_bps: float
    count: int
    iterations: int
    converged: bool
    saturated: bool = False


def calibrate_pp_threshold(
    count_reallocations: Callable[[float], int],
    target: int,
    upper_bps: float,
    tolerance: float = 0.05,
    max_iterations: int = _MAX_BISECTIONS,
) -> Calibration:
    """Finds the PP threshold whose reallocation count matches ``target``.

    Relies on the count being non-decreasing in the threshold.

    Args:
        count_reallocations (Callable[[float], int]): Runs the replayed scenario
            with PP at a threshold and returns its reallocation count.
        target (int): Count to match, usually from an ML-NSCA run on the same seeds.
        upper_bps (float): A threshold above every achievable key rate.
        tolerance (float): Accepted relative deviation from ``target``. Default: 5%.
        max_iterations (int): Bisection limit. Default: 40.

    Returns:
        Calibration: The threshold; ``saturated`` when even ``upper_bps`` falls
        short of the target.
    """
    if target < 0:
        raise ValueError(f"Target reallocation count must be non-negative, got {target}")
    if target == 0:
        return Calibration(0.0, 0, 0, True)
    slack = tolerance * target
    top = count_reallocations(upper_bps)
    logger.info("PP threshold %.3f bps: %d reallocations", upper_bps, top)
    if top < target - slack:
        logger.warning("PP saturates at %d reallocations, below the target %d", top, target)
        return Calibration(upper_bps, top, 1, False, saturated=True)
    if abs(top - target) <= slack:
        return Calibration(upper_bps, top, 1, True)
    low, high = 0.0, upper_bps
    best = Calibration(upper_bps, top, 1, False)
    for iteration in range(2, max_iterations + 1):
        middle = 0.5 * (low + high)
        count = count_reallocations(middle)
        logger.info("PP threshold %.3f bps: %d reallocations", middle, count)
        if abs(count - target) < abs(best.count - target):
            best = Calibration(middle, count, iteration, False)
        if abs(count - target) <= slack:
            return Calibration(middle, count, iteration, True)
        if count < target:
            low = middle
        else:
            high = middle
    logger.warning(
        "PP calibration stopped after %d iterations at %d reallocations (target %d)",
        max_iterations,
        best.count,
        target,
    )
    return Calibration(best.threshold_bps, best.count, max_iterations, False)


def ml_nsca_reallocate(
    network: Network,
    model: GbdtModel,
    subset: FeatureSubset,
    ts: int,
    load_erlang: float,
    qch_count: int = 1,
) -> ReallocationOutcome:
    """One ML-NSCA reallocation event over every MUX link, in link order.

    Each link releases its quantum channels, scores every available channel with
    ``model`` and takes the ``qch_count`` best, lowest index first on ties. A link
    without enough available channels keeps fewer quantum channels this window.

    Returns:
        ReallocationOutcome: New channels per link, moves and suspensions.
    """
    assignments = {}
    moved = suspended = 0
    for link in network.mux_links:
        before = set(network.release_quantum(link.index))
        candidates = network.available_channels(link.index)
        if candidates:
            rows = extract_candidates(network, link.index, subset, candidates, load_erlang, ts)
            scores = predict_many(model, rows)
            order = sorted(range(len(candidates)), key=lambda k: (-scores[k], candidates[k]))
            chosen = sorted(candidates[k] for k in order[:qch_count])
        else:
            chosen = []
        for channel in chosen:
            network.place_quantum(link.index, channel)
        missing = qch_count - len(chosen)
        if missing:
            suspended += missing
            logger.warning(
                "Link %d: %d quantum channel(s) suspended at slot %d",
                link.index,
                missing,
                network.timeslot,
            )
        moved += len(set(chosen) - before)
        assignments[link.index] = tuple(chosen)
        logger.debug("Link %d: quantum channels %s -> %s", link.index, sorted(before), chosen)
    return ReallocationOutcome(assignments, moved, suspended)


def oracle_allocate(
    network: Network,
    link: int,
    future: ArrivalSource,
    ts: int,
    params: QkdParams,
) -> Optional[int]:
    """Clairvoyant choice of a quantum channel for the next window.

    Args:
        network (Network): Snapshot with the quantum channel to place released.
        link (int): MUX link.
        future (ArrivalSource): The actual requests of the coming slots.
        ts (int): Window length in slots.
        params (QkdParams): Physical constants.

    Returns:
        Optional[int]: Channel with the best window-mean key rate, lowest index on
        ties; ``None`` when no channel is available.
    """
    candidates = network.available_channels(link)
    if not candidates:
        return None
    return best_candidate(network, link, candidates, future, ts, params)


class AllocationStrategy(ABC):
    """A strategy driven slot by slot by the simulation loop."""

    def __init__(self, config: StrategyConfig, params: QkdParams):
        self._config = config
        self._params = params

    @property
    def config(self) -> StrategyConfig:
        return self._config

    def initialize(self, network: Network) -> None:
        """Places the initial quantum channels before any traffic exists."""
        fb_allocate(network, self._config.qch_count)

    @abstractmethod
    def step(self, network: Network, future: ArrivalSource) -> StepOutcome:
        """Acts on the network after the slot's requests have been provisioned."""

    def _is_reallocation_slot(self, network: Network) -> bool:
        return network.timeslot > 0 and network.timeslot % self._config.ts == 0


class FixedBandStrategy(AllocationStrategy):
    def step(self, network: Network, future: ArrivalSource) -> StepOutcome:
        return StepOutcome()


class PerformancePredictingStrategy(AllocationStrategy):
    def step(self, network: Network, future: ArrivalSource) -> StepOutcome:
        moved = 0
        for link in network.mux_links:
            for channel in network.quantum_channels(link.index):
                decision = pp_step(
                    network, link.index, self._config.threshold_bps, self._params, channel
                )
                if isinstance(decision, Reallocate):
                    network.release_quantum(link.index, channel)
                    network.place_quantum(link.index, decision.channel)
                    moved += 1
                    logger.debug(
                        "Link %d: quantum channel %d -> %d at slot %d",
                        link.index,
                        channel,
                        decision.channel,
                        network.timeslot,
                    )
        return StepOutcome(moved=moved, events=moved)


class MlNscaStrategy(AllocationStrategy):
    """Reallocates every ``ts`` slots by predicted ``p_opt``."""

    def __init__(
        self, config: StrategyConfig, params: QkdParams, model: GbdtModel, load_erlang: float
    ):
        super().__init__(config, params)
        if model.schema is not None and model.schema.subset is not config.subset:
            raise SchemaMismatchError(
                f"Model was trained on {model.schema.subset.value}, strategy uses"
                f" {config.subset.value}"
            )
        self._model = model
        self._load = load_erlang

    def initialize(self, network: Network) -> None:
        if self._model.schema is not None:
            self._model.schema.check(feature_schema(network, self._config.subset))
        super().initialize(network)

    def step(self, network: Network, future: ArrivalSource) -> StepOutcome:
        if not self._is_reallocation_slot(network):
            return StepOutcome()
        outcome = ml_nsca_reallocate(
            network,
            self._model,
            self._config.subset,
            self._config.ts,
            self._load,
            self._config.qch_count,
        )
        return StepOutcome(outcome.moved, len(network.mux_links), outcome.suspended)


class OracleStrategy(AllocationStrategy):
    """Reallocates every ``ts`` slots using the true future requests."""

    def step(self, network: Network, future: ArrivalSource) -> StepOutcome:
        if not self._is_reallocation_slot(network):
            return StepOutcome()
        moved = suspended = 0
        for link in network.mux_links:
            before = set(network.release_quantum(link.index))
            chosen: List[int] = []
            for _ in range(self._config.qch_count):
                channel = oracle_allocate(
                    network, link.index, future, self._config.ts, self._params
                )
                if channel is None:
                    suspended += 1
                    continue
                network.place_quantum(link.index, channel)
                chosen.append(channel)
            moved += len(set(chosen) - before)
        return StepOutcome(moved, len(network.mux_links), suspended)


def make_strategy(
    config: StrategyConfig,
    params: QkdParams,
    load_erlang: float,
    model: Optional[GbdtModel] = None,
) -> AllocationStrategy:
    """Builds the strategy ``config`` describes, loading its model if needed."""
    if config.kind is StrategyKind.FB:
        return FixedBandStrategy(config, params)
    if config.kind is StrategyKind.PP:
        return PerformancePredictingStrategy(config, params)
    if config.kind is StrategyKind.ORACLE:
        return OracleStrategy(config, params)
    if model is None:
        if config.model is None:
            raise ConfigError("ML-NSCA strategy needs a model file")
        model = load_model(config.model)
    return MlNscaStrategy(config, params, model, load_erlang)


def strategy_labels(configs: Sequence[StrategyConfig]) -> List[str]:
    """List[str]: Unique display labels, suffixed when a kind repeats."""
    seen: Dict[str, int] = {}
    labels = []
    for config in configs:
        n = seen.get(config.label, 0)
        seen[config.label] = n + 1
        labels.append(config.label if n == 0 else f"{config.label}#{n + 1}")
    return labels
