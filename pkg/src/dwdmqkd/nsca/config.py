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

"""Scenario and strategy configuration, and the JSON scenario file loader."""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

from dwdmqkd.nsca.errors import ConfigError
from dwdmqkd.nsca.features import FeatureSubset
from dwdmqkd.nsca.network import (
    TopologySpec,
    load_topology,
    with_random_lengths,
    with_uniform_length,
)
from dwdmqkd.nsca.physics import QkdParams, load_qkd_params
from dwdmqkd.nsca.traffic import TrafficParams

logger = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    FB = "FB"
    PP = "PP"
    ML_NSCA = "ML-NSCA"
    ORACLE = "Oracle"


@dataclass(frozen=True)
class StrategyConfig:
    """How quantum channels are allocated.

    Args:
        kind (StrategyKind): Fixed-band, performance-predicting, ML-NSCA or the
            clairvoyant oracle.
        ts (int): Reallocation window in slots (ML-NSCA, Oracle). Default: 10.
        threshold_bps (float): Key-rate requirement below which PP reallocates.
            Default: 0.
        model (Optional[str]): Path of the trained model file (ML-NSCA).
        subset (FeatureSubset): Feature subset the model was trained on. Default: S4.
        qch_count (int): Quantum channels per MUX link. Default: 1.
    """

    kind: StrategyKind
    ts: int = 10
    threshold_bps: float = 0.0
    model: Optional[str] = None
    subset: FeatureSubset = FeatureSubset.S4
    qch_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        object.__setattr__(self, "subset", FeatureSubset(self.subset))
        if self.ts < 1:
            raise ConfigError(f"Reallocation window must be at least 1 slot, got {self.ts}")
        if self.threshold_bps < 0:
            raise ConfigError(f"PP threshold must be non-negative, got {self.threshold_bps}")
        if self.qch_count < 1:
            raise ConfigError(f"qch_count must be at least 1, got {self.qch_count}")

    @property
    def label(self) -> str:
        return self.kind.value

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "ts": self.ts,
            "threshold_bps": self.threshold_bps,
            "model": self.model,
            "subset": self.subset.value,
            "qch_count": self.qch_count,
        }


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a simulation, dataset or sweep run needs.

    Args:
        topology (TopologySpec): The network.
        traffic (TrafficParams): Offered classical load; its seed is replaced per
            repetition.
        qkd (QkdParams): Physical constants.
        strategies (Tuple[StrategyConfig, ...]): Strategies compared on paired seeds.
        ts (int): Reallocation window in slots. Default: 10.
        n_requests (int): Offered requests per repetition. Default: 1000.
        n_repetitions (int): Independent repetitions. Default: 1.
        seed (int): Root seed of all randomness. Default: 0.
        workers (int): Processes for repetitions and Monte-Carlo draws. Default: 1.
        max_slots (Optional[int]): Hard cap on slots per repetition.
        record_trace (bool): Keep the per-slot key-rate trace in the metrics.
        n_sets (int): Monte-Carlo futures per labelled event. Default: 200.
    """

    topology: TopologySpec
    traffic: TrafficParams
    qkd: QkdParams = dataclasses.field(default_factory=QkdParams)
    strategies: Tuple[StrategyConfig, ...] = ()
    ts: int = 10
    n_requests: int = 1000
    n_repetitions: int = 1
    seed: int = 0
    workers: int = 1
    max_slots: Optional[int] = None
    record_trace: bool = False
    n_sets: int = 200

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        for name in ("ts", "n_requests", "n_repetitions", "workers", "n_sets"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigError(f"Seed must be non-negative, got {self.seed}")
        if self.max_slots is not None and self.max_slots < 1:
            raise ConfigError(f"max_slots must be at least 1, got {self.max_slots}")

    @property
    def slot_limit(self) -> int:
        """int: Slot cap of a repetition; defaults to ``n_requests`` without traffic."""
        if self.max_slots is not None:
            return self.max_slots
        if self.traffic.load_erlang == 0:
            return self.n_requests
        return max(self.n_requests, 100 * int(self.n_requests / self.traffic.arrival_rate + 1))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "topology": self.topology.to_dict(),
            "traffic": {
                "load_erlang": self.traffic.load_erlang,
                "mean_holding_slots": self.traffic.mean_holding_slots,
                "power_range_dbm": list(self.traffic.power_range_dbm),
            },
            "physics": self.qkd.to_dict(),
            "strategies": [s.to_dict() for s in self.strategies],
            "ts": self.ts,
            "n_requests": self.n_requests,
            "n_repetitions": self.n_repetitions,
            "seed": self.seed,
            "workers": self.workers,
            "max_slots": self.max_slots,
            "record_trace": self.record_trace,
            "n_sets": self.n_sets,
        }


_SCENARIO_KEYS = {
    "topology",
    "span_lengths_km",
    "physics",
    "traffic",
    "strategies",
    "ts",
    "n_requests",
    "n_repetitions",
    "seed",
    "workers",
    "max_slots",
    "record_trace",
    "n_sets",
}


def _resolve(base_dir: str, path: Optional[str]) -> Optional[str]:
    if path is None or os.path.isabs(path):
        return path
    candidate = os.path.join(base_dir, path)
    if os.path.exists(candidate):
        return candidate
    return path


def _topology(data: Mapping[str, Any], base_dir: str, seed: int) -> TopologySpec:
    source = data.get("topology")
    if not source:
        raise ConfigError("Scenario does not name a topology")
    if isinstance(source, Mapping):
        spec = TopologySpec.from_dict(source)
    else:
        try:
            spec = load_topology(_resolve(base_dir, source))
        except FileNotFoundError as e:
            raise ConfigError(f"Topology file {source} not found") from e
    lengths = data.get("span_lengths_km")
    if lengths is None:
        return spec
    if isinstance(lengths, (int, float)):
        return with_uniform_length(spec, float(lengths))
    if len(lengths) != 2:
        raise ConfigError(f"span_lengths_km must be a number or [low, high], got {lengths}")
    return with_random_lengths(spec, float(lengths[0]), float(lengths[1]), seed)


def _strategy(data: Mapping[str, Any], base_dir: str, ts: int) -> StrategyConfig:
    values = dict(data)
    values.setdefault("ts", ts)
    if values.get("model") is not None:
        values["model"] = _resolve(base_dir, values["model"])
    try:
        return StrategyConfig(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid strategy entry {dict(data)}: {e}") from e


def scenario_from_dict(
    data: Mapping[str, Any], base_dir: str = ".", overrides: Optional[Mapping[str, Any]] = None
) -> ScenarioConfig:
    """Builds a scenario from the scenario-file structure.

    Args:
        data (Mapping[str, Any]): Parsed scenario file.
        base_dir (str): Directory relative paths resolve against.
        overrides (Optional[Mapping[str, Any]]): Values taking precedence over ``data``;
            ``None`` values are ignored. Traffic keys (``load_erlang``,
            ``mean_holding_slots``, ``power_range_dbm``) may be given at top level.

    Returns:
        ScenarioConfig: The validated scenario.
    """
    merged = dict(data)
    traffic = dict(merged.get("traffic") or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("load_erlang", "mean_holding_slots", "power_range_dbm"):
            traffic[key] = value
        else:
            merged[key] = value
    unknown = set(merged) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"Unknown scenario keys: {sorted(unknown)}")
    seed = int(merged.get("seed", 0))
    ts = int(merged.get("ts", 10))
    spec = _topology(merged, base_dir, seed)
    physics = _resolve(base_dir, merged.get("physics"))
    try:
        qkd = load_qkd_params(physics) if physics else QkdParams()
    except FileNotFoundError as e:
        raise ConfigError(f"Physics file {physics} not found") from e
    if "load_erlang" not in traffic:
        raise ConfigError("Scenario traffic needs load_erlang")
    try:
        traffic_params = TrafficParams(
            load_erlang=float(traffic["load_erlang"]),
            mean_holding_slots=float(traffic.get("mean_holding_slots", 10.0)),
            power_range_dbm=tuple(traffic.get("power_range_dbm", (-5.0, 5.0))),
            seed=seed,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    strategies = tuple(_strategy(s, base_dir, ts) for s in merged.get("strategies", ()))
    max_slots = merged.get("max_slots")
    return ScenarioConfig(
        topology=spec,
        traffic=traffic_params,
        qkd=qkd,
        strategies=strategies,
        ts=ts,
        n_requests=int(merged.get("n_requests", 1000)),
        n_repetitions=int(merged.get("n_repetitions", 1)),
        seed=seed,
        workers=int(merged.get("workers", 1)),
        max_slots=None if max_slots is None else int(max_slots),
        record_trace=bool(merged.get("record_trace", False)),
        n_sets=int(merged.get("n_sets", 200)),
    )


def load_scenario(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """ScenarioConfig: The scenario file at ``path`` with ``overrides`` applied."""
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Scenario file {path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Scenario file {path} is not valid JSON: {e}") from e
    scenario = scenario_from_dict(data, os.path.dirname(os.path.abspath(path)), overrides)
    logger.debug("Loaded scenario %s on topology %s", path, scenario.topology.name)
    return scenario
