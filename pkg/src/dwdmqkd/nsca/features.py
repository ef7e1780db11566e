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

"""Feature vectors describing a MUX link and a candidate quantum channel.

Four subsets are supported. S1 holds the residual holding time (RHT) of every
channel on every link; S2 only that of the processing link; S3 adds the
path-based RHT of each channel; S4 is S3 with the traffic load normalised to the
share carried by the processing link. The S4 layout depends only on the channel
count, which lets a model trained on one topology run on another.

Channels holding a quantum channel report an RHT of twice the reallocation
window, marking them unavailable for the whole next window.
"""

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Sequence, Tuple

import numpy as np

from dwdmqkd.nsca.errors import ChannelStateError, SchemaMismatchError
from dwdmqkd.nsca.network import ChannelKind, Network

SCHEMA_VERSION = 1


class FeatureSubset(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"


@dataclass(frozen=True)
class FeatureSchema:
    """Names and order of the elements of a feature vector.

    Args:
        subset (FeatureSubset): The subset the schema describes.
        names (Tuple[str, ...]): Element names in vector order.
        version (int): Layout version. Default: ``SCHEMA_VERSION``.
    """

    subset: FeatureSubset
    names: Tuple[str, ...]
    version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.names)

    @property
    def fingerprint(self) -> str:
        """str: Digest of version, subset and names; equal schemas share it."""
        payload = json.dumps([self.version, self.subset.value, list(self.names)])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "subset": self.subset.value,
            "length": len(self.names),
            "names": list(self.names),
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureSchema":
        schema = cls(FeatureSubset(data["subset"]), tuple(data["names"]), int(data["version"]))
        if "fingerprint" in data and data["fingerprint"] != schema.fingerprint:
            raise SchemaMismatchError("Feature schema fingerprint does not match its names")
        return schema

    def check(self, other: "FeatureSchema") -> None:
        """Raises ``SchemaMismatchError`` unless ``other`` has the same layout."""
        if other.fingerprint != self.fingerprint:
            raise SchemaMismatchError(
                f"Feature schema {other.subset.value}/{len(other)} ({other.fingerprint}) does not"
                f" match {self.subset.value}/{len(self)} ({self.fingerprint})"
            )


@dataclass(frozen=True)
class FeatureVector:
    schema: FeatureSchema
    values: np.ndarray

    @property
    def candidate(self) -> int:
        """int: The candidate channel, always the last element."""
        return int(self.values[-1])


def feature_schema(network: Network, subset: FeatureSubset) -> FeatureSchema:
    """FeatureSchema: The layout of ``subset`` for the topology of ``network``."""
    subset = FeatureSubset(subset)
    channels = range(1, network.n_channels + 1)
    load = "normalized_load" if subset is FeatureSubset.S4 else "traffic_load"
    names = ["link_length_km", load, "time_window"]
    if subset is FeatureSubset.S1:
        names += [f"rht_link{link.index}_ch{c}" for link in network.links for c in channels]
    else:
        names += [f"rht_ch{c}" for c in channels]
    if subset in (FeatureSubset.S3, FeatureSubset.S4):
        names += [f"rht_path_ch{c}" for c in channels]
    names += [f"power_mw_ch{c}" for c in channels]
    names.append("candidate_qch")
    return FeatureSchema(subset, tuple(names))


def rht_matrix(network: Network, quantum_rht: float) -> np.ndarray:
    """(links, channels) RHT with Free as 0 and Quantum as ``quantum_rht``."""
    kinds = network.kinds
    return np.where(
        kinds == ChannelKind.DATA,
        network.rht.astype(float),
        np.where(kinds == ChannelKind.QUANTUM, float(quantum_rht), 0.0),
    )


def rht_path(network: Network, path: Sequence[int], channel: int, quantum_rht: float) -> float:
    """Path-based RHT of ``channel``: the largest RHT over the links of ``path``.

    Args:
        network (Network): Occupancy snapshot.
        path (Sequence[int]): Link indices, non-empty.
        channel (int): 1-based channel.
        quantum_rht (float): Value reported for a quantum-occupied channel.

    Returns:
        float: 0 when the channel is free end to end.
    """
    if not path:
        raise ValueError("Path must contain at least one link")
    return float(rht_matrix(network, quantum_rht)[list(path), channel - 1].max())


def link_usage_probability(network: Network, link: int) -> float:
    """float: Share of ordered node pairs whose shortest path uses ``link``."""
    pairs = network.node_pairs()
    return len(network.paths_through(link)) / len(pairs)


def normalized_tl(network: Network, link: int, load_erlang: float) -> float:
    """float: Traffic load carried by ``link``, ``p_m * TL`` in Erlang."""
    if load_erlang < 0:
        raise ValueError(f"Traffic load must be non-negative, got {load_erlang}")
    return link_usage_probability(network, link) * load_erlang


def path_rht_profile(network: Network, link: int, quantum_rht: float) -> np.ndarray:
    """Per-channel RHT_path averaged over every shortest path through ``link``.

    Falls back to the link's own RHT when no shortest path uses it.
    """
    rht = rht_matrix(network, quantum_rht)
    paths = network.paths_through(link)
    if not paths:
        return rht[link].copy()
    return np.mean([rht[list(p)].max(axis=0) for p in paths], axis=0)


def extract_candidates(
    network: Network,
    link: int,
    subset: FeatureSubset,
    candidates: Sequence[int],
    load_erlang: float,
    window: int,
) -> np.ndarray:
    """Feature matrix with one row per candidate channel.

    Rows are identical except for the final candidate element.

    Returns:
        np.ndarray: Array of shape ``(len(candidates), schema length)``.
    """
    subset = FeatureSubset(subset)
    if not network.link(link).is_mux:
        raise ChannelStateError(f"Link {link} is a data-only link")
    available = set(network.available_channels(link))
    for candidate in candidates:
        if candidate not in available:
            raise ChannelStateError(f"Channel {candidate} is not available on link {link}")
    quantum_rht = 2.0 * window
    rht = rht_matrix(network, quantum_rht)
    load = (
        normalized_tl(network, link, load_erlang)
        if subset is FeatureSubset.S4
        else float(load_erlang)
    )
    parts = [np.array([network.link(link).length_km, load, float(window)])]
    if subset is FeatureSubset.S1:
        parts.append(rht.ravel())
    else:
        parts.append(rht[link])
    if subset in (FeatureSubset.S3, FeatureSubset.S4):
        parts.append(path_rht_profile(network, link, quantum_rht))
    parts.append(np.asarray(network.power_mw[link], dtype=float))
    base = np.concatenate(parts)
    rows = np.empty((len(candidates), base.size + 1))
    rows[:, :-1] = base
    rows[:, -1] = np.asarray(candidates, dtype=float)
    return rows


def extract(
    network: Network,
    link: int,
    subset: FeatureSubset,
    candidate: int,
    load_erlang: float,
    window: int,
) -> FeatureVector:
    """Feature vector of one candidate quantum channel on MUX ``link``.

    Args:
        network (Network): Snapshot with the link's quantum channel released.
        link (int): The processing link.
        subset (FeatureSubset): Which subset to build.
        candidate (int): An available channel of ``link``.
        load_erlang (float): Offered traffic load TL.
        window (int): Reallocation window TS in slots.

    Returns:
        FeatureVector: Values in the canonical order of :func:`feature_schema`.
    """
    values = extract_candidates(network, link, subset, [candidate], load_erlang, window)[0]
    return FeatureVector(feature_schema(network, subset), values)
