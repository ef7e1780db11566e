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
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from dwdmqkd.nsca.dataset import (
    Dataset,
    McConfig,
    TrainingRow,
    best_candidate,
    future_seed,
    generate_dataset,
    generate_datasets,
    metadata_path,
    monte_carlo_label,
    read_dataset,
    window_mean_skr,
    window_mean_skrs,
    write_dataset,
)
from dwdmqkd.nsca.errors import ChannelStateError, SchemaMismatchError
from dwdmqkd.nsca.features import FeatureSubset, feature_schema
from dwdmqkd.nsca.physics import evaluate_link_skr
from dwdmqkd.nsca.traffic import TrafficParams, generate_arrivals


def no_arrivals(slot):
    return []


@pytest.fixture
def small_dataset(ring):
    schema = feature_schema(ring, FeatureSubset.S2)
    events = np.array([0, 0, 1, 1, 1, 2, 2])
    features = np.arange(7 * len(schema), dtype=float).reshape(7, len(schema))
    p_opt = np.array([0.75, 0.25, 0.5, 0.5, 0.0, 1.0, 0.0])
    return Dataset(schema, events, features, p_opt, {"topology": "4node"})


@pytest.mark.parametrize(
    "kwargs", [{"n_sets": 0}, {"ts": 0}, {"workers": 0}],
)
def test_invalid_mc_config(kwargs):
    with pytest.raises(ValueError):
        McConfig(**kwargs)


def test_future_seeds_are_distinct():
    mc = McConfig(seed=3)
    seeds = {future_seed(mc, 10, 0, k) for k in range(50)}
    assert len(seeds) == 50
    assert future_seed(mc, 10, 0, 1) != future_seed(mc, 10, 2, 1)


def test_window_mean_without_traffic(line, qkd):
    line.occupy_data(0, 3, 20, 2.0, 1)
    expected = line.copy()
    expected.place_quantum(0, 1)
    rate = evaluate_link_skr(expected, 0, 1, qkd).rate_bps
    assert window_mean_skr(line, 0, 1, no_arrivals, 5, qkd) == pytest.approx(rate)
    assert line.quantum_channels(0) == ()
    assert line.timeslot == 0


def test_window_mean_sees_expiry(line, qkd):
    line.occupy_data(0, 2, 1, 5.0, 1)
    quiet = line.copy()
    quiet.advance_timeslot()
    quiet.place_quantum(0, 1)
    rate = evaluate_link_skr(quiet, 0, 1, qkd).rate_bps
    assert window_mean_skr(line, 0, 1, no_arrivals, 3, qkd) == pytest.approx(rate)


def test_shared_replay_matches_separate_replays(ring, qkd):
    ring.occupy_data(0, 3, 4, 3.0, 1)
    traffic = TrafficParams(25.0, seed=5)

    def arrivals(slot):
        return generate_arrivals(traffic, ring.n_nodes, slot)

    candidates = ring.available_channels(0)
    shared = window_mean_skrs(ring, 0, candidates, arrivals, 6, qkd)
    separate = [window_mean_skr(ring, 0, ch, arrivals, 6, qkd) for ch in candidates]
    np.testing.assert_allclose(shared, separate, rtol=1e-12)
    assert ring.quantum_channels(0) == ()
    assert ring.timeslot == 0


def test_best_candidate_ties_go_low(line, qkd):
    assert best_candidate(line, 0, (2, 3, 4), no_arrivals, 4, qkd) == 2


def test_best_candidate_avoids_noise(line, qkd):
    line.occupy_data(0, 2, 50, 10.0, 1)
    assert best_candidate(line, 0, (1, 3, 4), no_arrivals, 4, qkd) == 4


def test_single_candidate_label(line, qkd):
    for channel in (1, 2, 4):
        line.occupy_data(0, channel, 5, 1.0, channel)
    labels = monte_carlo_label(line, 0, McConfig(n_sets=7), TrafficParams(5.0), qkd)
    assert labels == {3: 1.0}


@pytest.mark.xfail(raises=ChannelStateError)
def test_no_candidate_label(line, qkd):
    for channel in range(1, 5):
        line.occupy_data(0, channel, 5, 1.0, channel)
    monte_carlo_label(line, 0, McConfig(n_sets=2), TrafficParams(5.0), qkd)


def test_idle_label_goes_to_lowest_channel(line, qkd):
    labels = monte_carlo_label(line, 0, McConfig(n_sets=5, ts=3), TrafficParams(0.0), qkd)
    assert labels == {1: 1.0, 2: 0.0, 3: 0.0, 4: 0.0}


def test_labels_sum_to_one(ring, qkd):
    ring.occupy_data(0, 2, 4, 3.0, 1)
    ring.occupy_data(0, 5, 9, 2.0, 2)
    mc = McConfig(n_sets=6, ts=4, seed=1)
    labels = monte_carlo_label(ring, 0, mc, TrafficParams(20.0), qkd)
    assert list(labels) == list(ring.available_channels(0))
    assert sum(labels.values()) == pytest.approx(1.0)
    assert all(v * mc.n_sets == pytest.approx(round(v * mc.n_sets)) for v in labels.values())


def test_labels_steady_with_more_futures(ring, qkd):
    traffic = TrafficParams(30.0)

    def spread(n_sets):
        draws = [
            list(monte_carlo_label(ring, 0, McConfig(n_sets, 3, seed), traffic, qkd).values())
            for seed in range(8)
        ]
        return np.std(draws, axis=0).mean()

    few, many = spread(4), spread(64)
    assert few > 0
    assert many < few


def test_parallel_draws_match_serial(ring, qkd):
    ring.occupy_data(0, 3, 4, 3.0, 1)
    mc = McConfig(n_sets=5, ts=3, seed=2, workers=2)
    serial = monte_carlo_label(ring, 0, mc, TrafficParams(15.0), qkd)
    with ThreadPoolExecutor(2) as executor:
        parallel = monte_carlo_label(ring, 0, mc, TrafficParams(15.0), qkd, executor)
    assert parallel == serial


def test_dataset_container(small_dataset):
    assert len(small_dataset) == 7
    assert small_dataset.n_events == 3
    groups = small_dataset.event_groups()
    assert [g.tolist() for g in groups] == [[0, 1], [2, 3, 4], [5, 6]]
    rows = list(small_dataset)
    assert isinstance(rows[0], TrainingRow)
    assert rows[2].event == 1 and rows[2].p_opt == 0.5


@pytest.mark.xfail(raises=ValueError)
def test_dataset_rejects_ragged_rows(small_dataset):
    Dataset(small_dataset.schema, [0, 1], small_dataset.features[:3], [0.5, 0.5])


@pytest.mark.xfail(raises=ValueError)
def test_dataset_rejects_labels_out_of_range(small_dataset):
    Dataset(small_dataset.schema, [0], small_dataset.features[:1], [1.5])


def test_split_keeps_events_whole(small_dataset):
    train, test = small_dataset.split(0.34, seed=1)
    assert len(train) + len(test) == len(small_dataset)
    assert not set(train.events) & set(test.events)
    assert test.n_events == 1


def test_concat_renumbers_events(small_dataset):
    joined = Dataset.concat([small_dataset, small_dataset])
    assert len(joined) == 14
    assert joined.n_events == 6


def test_csv_round_trip(tmp_path, small_dataset):
    path = str(tmp_path / "train.csv")
    write_dataset(small_dataset, path)
    with open(metadata_path(path)) as f:
        meta = json.load(f)
    assert meta["rows"] == 7 and meta["events"] == 3
    back = read_dataset(path, small_dataset.schema)
    assert back.schema == small_dataset.schema
    np.testing.assert_array_equal(back.features, small_dataset.features)
    np.testing.assert_array_equal(back.p_opt, small_dataset.p_opt)
    np.testing.assert_array_equal(back.events, small_dataset.events)
    assert back.metadata == {"topology": "4node"}


@pytest.mark.xfail(raises=SchemaMismatchError)
def test_read_with_other_schema(tmp_path, ring, small_dataset):
    path = str(tmp_path / "train.csv")
    write_dataset(small_dataset, path)
    read_dataset(path, feature_schema(ring, FeatureSubset.S4))


@pytest.mark.xfail(raises=SchemaMismatchError)
def test_read_with_edited_header(tmp_path, small_dataset):
    path = tmp_path / "train.csv"
    write_dataset(small_dataset, str(path))
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace("rht_ch1", "rht_ch9")
    path.write_text("\n".join(lines) + "\n")
    read_dataset(str(path))


def test_idle_dataset(idle_scenario):
    data = generate_dataset(idle_scenario, 6)
    assert data.n_events == 6
    assert len(data) == 6 * 8
    assert data.schema.subset is FeatureSubset.S4
    channels = data.features[:, -1]
    np.testing.assert_array_equal(data.p_opt, (channels == 1).astype(float))
    assert data.metadata["ts"] == idle_scenario.ts


def test_generation_advances_the_clock(idle_scenario):
    data = generate_dataset(idle_scenario, 6)
    assert data.metadata["slots"] == 2 * idle_scenario.ts + 1


def test_loaded_generation_moves_past_first_window(scenario):
    data = generate_dataset(scenario, 6, FeatureSubset.S2)
    assert data.n_events == 6
    assert data.metadata["slots"] > scenario.ts


def test_generation_is_deterministic(scenario):
    first = generate_dataset(scenario, 5, FeatureSubset.S2)
    second = generate_dataset(scenario, 5, FeatureSubset.S2)
    np.testing.assert_array_equal(first.features, second.features)
    np.testing.assert_array_equal(first.p_opt, second.p_opt)
    for rows in first.event_groups():
        assert first.p_opt[rows].sum() == pytest.approx(1.0)


def test_subsets_share_events_and_labels(scenario):
    datasets = generate_datasets(scenario, 3, [FeatureSubset.S2, FeatureSubset.S4])
    s2, s4 = datasets[FeatureSubset.S2], datasets[FeatureSubset.S4]
    np.testing.assert_array_equal(s2.events, s4.events)
    np.testing.assert_array_equal(s2.p_opt, s4.p_opt)
    np.testing.assert_array_equal(s2.features[:, -1], s4.features[:, -1])
    assert s2.features.shape[1] == 20 and s4.features.shape[1] == 28


@pytest.mark.xfail(raises=ValueError)
def test_needs_events(scenario):
    generate_dataset(scenario, 0)
