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

import pytest

from dwdmqkd.nsca.config import ScenarioConfig, StrategyConfig, StrategyKind
from dwdmqkd.nsca.network import Span, TopologySpec, build_topology, builtin_topology
from dwdmqkd.nsca.physics import QkdParams
from dwdmqkd.nsca.traffic import TrafficParams


@pytest.fixture
def ring_spec():
    return builtin_topology("4node")


@pytest.fixture
def ring(ring_spec):
    return build_topology(ring_spec)


@pytest.fixture
def line_spec():
    return TopologySpec(
        nodes=2, spans=(Span(0, 1, 10.0),), channels_per_fiber=4, name="line"
    )


@pytest.fixture
def line(line_spec):
    return build_topology(line_spec)


@pytest.fixture
def qkd():
    return QkdParams()


@pytest.fixture
def quiet_qkd():
    return QkdParams(dark_count_prob=0.0)


@pytest.fixture
def scenario(ring_spec):
    return ScenarioConfig(
        topology=ring_spec,
        traffic=TrafficParams(load_erlang=8.0),
        strategies=(StrategyConfig(StrategyKind.FB), StrategyConfig(StrategyKind.PP)),
        ts=5,
        n_requests=60,
        n_repetitions=2,
        seed=7,
        n_sets=4,
    )


@pytest.fixture
def idle_scenario(ring_spec):
    return ScenarioConfig(
        topology=ring_spec,
        traffic=TrafficParams(load_erlang=0.0),
        strategies=(StrategyConfig(StrategyKind.FB),),
        ts=5,
        n_requests=20,
        n_sets=3,
    )
