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

import numpy as np
import pytest

from dwdmqkd.nsca.dataset import generate_dataset
from dwdmqkd.nsca.features import FeatureSubset
from dwdmqkd.nsca.gbdt import GbdtParams, predict_many, rmse, train_arrays
from dwdmqkd.nsca.harness import evaluate_model, transfer_rmse


def test_additive_target_converges():
    rng = np.random.default_rng(0)
    features = rng.integers(0, 50, size=(10_000, 2)) / 49.0
    target = features[:, 0] + 2 * features[:, 1]
    model = train_arrays(features, target, GbdtParams(n_iterations=500))
    assert rmse(predict_many(model, features), target) < 0.01
    assert np.all(np.diff(model.rmse_history) <= 1e-12)


def test_training_set_size(ring_dataset, min_rows):
    assert len(ring_dataset) >= min_rows
    for rows in ring_dataset.event_groups():
        assert ring_dataset.p_opt[rows].sum() == pytest.approx(1.0)


def test_held_out_quality(ring_split, ring_model):
    _, test = ring_split
    evaluation = evaluate_model(ring_model, test)
    assert evaluation.rmse <= 0.08
    assert evaluation.coincident_rate >= 0.85
    assert evaluation.group_coincident_rate[3] >= 0.90
    assert sum(evaluation.group_proportion) == pytest.approx(1.0)


def test_labels_favour_distant_candidates(ring_dataset):
    names = ring_dataset.schema.names
    power = ring_dataset.features[:, [names.index(f"power_mw_ch{c}") for c in range(1, 9)]]
    candidate = ring_dataset.features[:, -1].astype(int)
    occupied = power > 0
    channels = np.arange(1, 9)
    distance = np.array(
        [
            np.abs(channels[row] - c).min() if row.any() else 8
            for row, c in zip(occupied, candidate)
        ]
    )
    adjacent = ring_dataset.p_opt[distance == 1]
    far = ring_dataset.p_opt[distance >= 3]
    assert far.mean() > adjacent.mean()


def test_transfer_to_six_nodes(ring_split, ring_model, make_scenario, n_events):
    _, test = ring_split
    six_nodes = make_scenario("6node", seed=12)
    six = generate_dataset(six_nodes, max(200, n_events // 5), FeatureSubset.S4)
    in_domain = evaluate_model(ring_model, test).rmse
    scores = transfer_rmse(ring_model, {"6node": six})
    assert scores["6node"] - in_domain < 0.05
