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

from dwdmqkd.nsca.allocation import make_strategy  # noqa: F401
from dwdmqkd.nsca.config import (  # noqa: F401
    ScenarioConfig,
    StrategyConfig,
    StrategyKind,
    load_scenario,
)
from dwdmqkd.nsca.dataset import (  # noqa: F401
    Dataset,
    McConfig,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from dwdmqkd.nsca.features import FeatureSubset, extract  # noqa: F401
from dwdmqkd.nsca.gbdt import GbdtModel, GbdtParams, load_model, persist_model, train  # noqa: F401
from dwdmqkd.nsca.harness import evaluate_model, run_experiment, sweep  # noqa: F401
from dwdmqkd.nsca.network import Network, TopologySpec, build_topology, load_topology  # noqa: F401
from dwdmqkd.nsca.physics import QkdParams, evaluate_link_skr  # noqa: F401
from dwdmqkd.nsca.traffic import TrafficParams  # noqa: F401

from ._version import __version__  # noqa: F401
