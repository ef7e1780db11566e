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

import json

import pytest

from dwdmqkd.nsca.config import (
    ScenarioConfig,
    StrategyConfig,
    StrategyKind,
    load_scenario,
    scenario_from_dict,
)
from dwdmqkd.nsca.errors import ConfigError
from dwdmqkd.nsca.features import FeatureSubset
from dwdmqkd.nsca.traffic import TrafficParams


@pytest.fixture
def scenario_data():
    return {
        "topology": "4node",
        "traffic": {"load_erlang": 12.0, "mean_holding_slots": 8.0},
        "strategies": [
            {"kind": "FB"},
            {"kind": "PP", "threshold_bps": 250.0},
            {"kind": "ML-NSCA", "model": "model.json", "subset": "S3"},
        ],
        "ts": 15,
        "n_requests": 500,
        "seed": 4,
    }


def test_scenario_from_dict(scenario_data):
    scenario = scenario_from_dict(scenario_data, "/data")
    assert scenario.topology.name == "4node"
    assert scenario.traffic == TrafficParams(12.0, 8.0, (-5.0, 5.0), 4)
    assert scenario.ts == 15
    assert scenario.n_requests == 500
    assert scenario.n_repetitions == 1
    kinds = [s.kind for s in scenario.strategies]
    assert kinds == [StrategyKind.FB, StrategyKind.PP, StrategyKind.ML_NSCA]
    assert all(s.ts == 15 for s in scenario.strategies)
    assert scenario.strategies[1].threshold_bps == 250.0
    assert scenario.strategies[2].subset is FeatureSubset.S3
    assert scenario.strategies[2].model == "model.json"


def test_overrides(scenario_data):
    overrides = {"seed": 9, "load_erlang": 2.0, "ts": None, "n_repetitions": 3}
    scenario = scenario_from_dict(scenario_data, overrides=overrides)
    assert scenario.seed == 9
    assert scenario.traffic.load_erlang == 2.0
    assert scenario.traffic.seed == 9
    assert scenario.ts == 15
    assert scenario.n_repetitions == 3


def test_uniform_span_lengths(scenario_data):
    scenario_data["span_lengths_km"] = 25
    scenario = scenario_from_dict(scenario_data)
    assert {s.length_km for s in scenario.topology.spans} == {25.0}


def test_random_span_lengths(scenario_data):
    scenario_data["span_lengths_km"] = [5, 30]
    first = scenario_from_dict(scenario_data)
    assert all(5.0 <= s.length_km <= 30.0 for s in first.topology.spans)
    assert first.topology == scenario_from_dict(scenario_data).topology


def test_inline_topology(scenario_data):
    scenario_data["topology"] = {
        "nodes": 2,
        "channels": 4,
        "spans": [{"a": 0, "b": 1, "length_km": 3}],
    }
    scenario = scenario_from_dict(scenario_data)
    assert scenario.topology.channels_per_fiber == 4


@pytest.mark.parametrize(
    "change",
    [
        {"colour": "blue"},
        {"traffic": {}},
        {"topology": None},
        {"topology": "missing/topology.json"},
        {"span_lengths_km": [1, 2, 3]},
        {"physics": "missing-physics.json"},
        {"strategies": [{"kind": "FB", "speed": 2}]},
        {"strategies": [{"kind": "PP", "threshold_bps": -1}]},
        {"ts": 0},
        {"traffic": {"load_erlang": -3}},
    ],
)
def test_invalid_scenarios(scenario_data, change):
    scenario_data.update(change)
    with pytest.raises(ConfigError):
        scenario_from_dict(scenario_data)


def test_load_scenario_resolves_relative_paths(tmp_path, scenario_data):
    (tmp_path / "model.json").write_text("{}")
    (tmp_path / "physics.json").write_text(json.dumps({"visibility": 0.97}))
    scenario_data["physics"] = "physics.json"
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scenario_data))
    scenario = load_scenario(str(path), {"workers": 2})
    assert scenario.qkd.visibility == 0.97
    assert scenario.strategies[2].model == str(tmp_path / "model.json")
    assert scenario.workers == 2


@pytest.mark.xfail(raises=ConfigError)
def test_missing_scenario_file(tmp_path):
    load_scenario(str(tmp_path / "absent.json"))


@pytest.mark.xfail(raises=ConfigError)
def test_malformed_scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text("{topology: ")
    load_scenario(str(path))


def test_slot_limit(ring_spec):
    base = ScenarioConfig(ring_spec, TrafficParams(20.0), n_requests=100)
    assert base.slot_limit == 100 * int(100 / 2.0 + 1)
    assert base.replace(max_slots=30).slot_limit == 30
    idle = ScenarioConfig(ring_spec, TrafficParams(0.0), n_requests=40)
    assert idle.slot_limit == 40


@pytest.mark.parametrize(
    "kwargs",
    [{"n_requests": 0}, {"n_repetitions": 0}, {"workers": 0}, {"seed": -1}, {"max_slots": 0}],
)
def test_invalid_scenario_config(ring_spec, kwargs):
    with pytest.raises(ConfigError):
        ScenarioConfig(ring_spec, TrafficParams(1.0), **kwargs)


def test_scenario_to_dict(ring_spec):
    strategies = (StrategyConfig("PP", threshold_bps=3.0),)
    data = ScenarioConfig(ring_spec, TrafficParams(5.0), strategies=strategies).to_dict()
    assert data["traffic"]["load_erlang"] == 5.0
    assert data["strategies"] == [strategies[0].to_dict()]
    assert data["strategies"][0]["kind"] == "PP"
    assert json.loads(json.dumps(data))["physics"]["visibility"] == 0.95
