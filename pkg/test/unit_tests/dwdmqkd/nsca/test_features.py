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

from dwdmqkd.nsca.errors import ChannelStateError, SchemaMismatchError
from dwdmqkd.nsca.features import (
    FeatureSchema,
    FeatureSubset,
    extract,
    extract_candidates,
    feature_schema,
    link_usage_probability,
    normalized_tl,
    path_rht_profile,
    rht_matrix,
    rht_path,
)


@pytest.mark.parametrize(
    "subset, length",
    [
        (FeatureSubset.S1, 76),
        (FeatureSubset.S2, 20),
        (FeatureSubset.S3, 28),
        (FeatureSubset.S4, 28),
    ],
)
def test_schema_lengths(ring, subset, length):
    schema = feature_schema(ring, subset)
    assert len(schema) == length
    assert schema.names[0] == "link_length_km"
    assert schema.names[-1] == "candidate_qch"
    assert len(set(schema.names)) == length


def test_schema_names(ring):
    s3 = feature_schema(ring, "S3")
    s4 = feature_schema(ring, "S4")
    assert s3.names[1] == "traffic_load"
    assert s4.names[1] == "normalized_load"
    assert "rht_path_ch8" in s4.names
    assert "rht_path_ch1" not in feature_schema(ring, "S2").names
    assert "rht_link7_ch8" in feature_schema(ring, "S1").names


def test_schema_fingerprint(ring):
    s4 = feature_schema(ring, FeatureSubset.S4)
    assert s4.fingerprint == feature_schema(ring.copy(), FeatureSubset.S4).fingerprint
    assert s4.fingerprint != feature_schema(ring, FeatureSubset.S3).fingerprint
    assert FeatureSchema.from_dict(s4.to_dict()) == s4
    s4.check(feature_schema(ring, FeatureSubset.S4))


def test_s1_schema_depends_on_topology(ring, line):
    with pytest.raises(SchemaMismatchError):
        feature_schema(ring, "S1").check(feature_schema(line, "S1"))


@pytest.mark.xfail(raises=SchemaMismatchError)
def test_tampered_schema_is_rejected(ring):
    data = feature_schema(ring, "S2").to_dict()
    data["names"] = list(reversed(data["names"]))
    FeatureSchema.from_dict(data)


def test_usage_probability(ring):
    assert link_usage_probability(ring, 0) == pytest.approx(0.25)
    assert normalized_tl(ring, 0, 10.0) == pytest.approx(2.5)
    total = sum(link_usage_probability(ring, link.index) for link in ring.links)
    hops = [len(ring.shortest_path(s, d)) for s, d in ring.node_pairs()]
    assert total == pytest.approx(np.mean(hops))


@pytest.mark.xfail(raises=ValueError)
def test_negative_load(ring):
    normalized_tl(ring, 0, -1.0)


def test_rht_matrix_marks_states(line):
    line.occupy_data(0, 2, 7, 1.0, 1)
    line.place_quantum(0, 1)
    rht = rht_matrix(line, 20.0)
    assert rht[0].tolist() == [20.0, 7.0, 0.0, 0.0]
    assert rht[1].tolist() == [0.0] * 4


def test_rht_path_is_max_over_links(ring):
    ring.occupy_data(0, 3, 4, 1.0, 1)
    ring.occupy_data(2, 3, 9, 1.0, 2)
    assert rht_path(ring, (0, 2), 3, 20.0) == 9.0
    assert rht_path(ring, (0,), 3, 20.0) == 4.0
    assert rht_path(ring, (0, 2), 1, 20.0) == 0.0


@pytest.mark.xfail(raises=ValueError)
def test_rht_path_needs_links(ring):
    rht_path(ring, (), 1, 20.0)


def test_path_profile_averages_paths(ring):
    ring.occupy_data(2, 5, 6, 1.0, 1)
    paths = ring.paths_through(0)
    profile = path_rht_profile(ring, 0, 20.0)
    through_link2 = sum(2 in p for p in paths)
    assert profile[4] == pytest.approx(6.0 * through_link2 / len(paths))
    assert profile[0] == 0.0


def test_extract_layout(ring):
    ring.occupy_data(0, 2, 3, 1.5, 1)
    ring.place_quantum(0, 8)
    vector = extract(ring, 0, FeatureSubset.S4, 5, 10.0, 10)
    values = dict(zip(vector.schema.names, vector.values))
    assert values["link_length_km"] == 5.0
    assert values["normalized_load"] == pytest.approx(2.5)
    assert values["time_window"] == 10.0
    assert values["rht_ch2"] == 3.0
    assert values["rht_ch8"] == 20.0
    assert values["power_mw_ch2"] == 1.5
    assert values["power_mw_ch1"] == 0.0
    assert vector.candidate == 5
    assert len(vector.values) == len(vector.schema)


def test_candidate_rows_differ_only_in_candidate(ring):
    ring.occupy_data(0, 1, 3, 1.0, 1)
    candidates = ring.available_channels(0)
    rows = extract_candidates(ring, 0, FeatureSubset.S3, candidates, 4.0, 5)
    assert rows.shape == (len(candidates), 28)
    assert rows[:, -1].tolist() == list(candidates)
    assert np.all(rows[:, :-1] == rows[0, :-1])
    assert rows[0, 1] == 4.0


def test_s1_covers_every_link(ring):
    ring.occupy_data(5, 4, 2, 1.0, 1)
    values = extract(ring, 0, FeatureSubset.S1, 1, 4.0, 5).values
    schema = feature_schema(ring, FeatureSubset.S1)
    assert values[schema.names.index("rht_link5_ch4")] == 2.0


@pytest.mark.xfail(raises=ChannelStateError)
def test_extract_on_data_only_link(ring):
    extract(ring, 1, FeatureSubset.S4, 1, 1.0, 10)


@pytest.mark.xfail(raises=ChannelStateError)
def test_extract_busy_candidate(ring):
    ring.occupy_data(0, 1, 3, 1.0, 1)
    extract(ring, 0, FeatureSubset.S4, 1, 1.0, 10)
