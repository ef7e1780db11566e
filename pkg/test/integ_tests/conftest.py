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

import os

import pytest

from dwdmqkd.nsca.config import ScenarioConfig, StrategyConfig, StrategyKind
from dwdmqkd.nsca.dataset import Dataset, generate_dataset
from dwdmqkd.nsca.features import FeatureSubset
from dwdmqkd.nsca.gbdt import GbdtParams, train
from dwdmqkd.nsca.network import builtin_topology
from dwdmqkd.nsca.traffic import TrafficParams

WORKERS = int(os.environ.get("DWDMQKD_INTEG_WORKERS", "1"))
EVENTS = int(os.environ.get("DWDMQKD_INTEG_EVENTS", "25000"))
MIN_ROWS = int(os.environ.get("DWDMQKD_INTEG_MIN_ROWS", "100000"))
REPETITIONS = int(os.environ.get("DWDMQKD_INTEG_REPETITIONS", "20"))


def _scenario(topology, load_erlang=30.0, seed=0, strategies=()):
    return ScenarioConfig(
        topology=builtin_topology(topology),
        traffic=TrafficParams(load_erlang=load_erlang, power_range_dbm=(-5.0, 5.0)),
        strategies=strategies,
        ts=10,
        n_requests=1000,
        n_repetitions=REPETITIONS,
        seed=seed,
        workers=WORKERS,
        n_sets=50,
    )


@pytest.fixture(scope="session")
def make_scenario():
    return _scenario


@pytest.fixture(scope="session")
def n_events():
    return EVENTS


@pytest.fixture(scope="session")
def min_rows():
    return MIN_ROWS


@pytest.fixture(scope="session")
def ring_dataset():
    parts = [generate_dataset(_scenario("4node", seed=11), EVENTS, FeatureSubset.S4)]
    while sum(len(p) for p in parts) < MIN_ROWS:
        seed = 11 + len(parts)
        parts.append(generate_dataset(_scenario("4node", seed=seed), EVENTS, FeatureSubset.S4))
    return Dataset.concat(parts)


@pytest.fixture(scope="session")
def ring_split(ring_dataset):
    return ring_dataset.split(0.2, seed=0)


@pytest.fixture(scope="session")
def ring_model(ring_split):
    train_part, _ = ring_split
    return train(train_part, GbdtParams())


@pytest.fixture(scope="session")
def comparison():
    return _scenario(
        "4node",
        seed=101,
        strategies=(
            StrategyConfig(StrategyKind.FB, ts=10),
            StrategyConfig(StrategyKind.ML_NSCA, ts=10),
            StrategyConfig(StrategyKind.ORACLE, ts=10),
        ),
    )
