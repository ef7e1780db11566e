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

"""Topology, per-link channel occupancy and the timeslot clock.

Channel indices are 1-based throughout the public API. Channel 1 is the shortest
wavelength on the grid: the grid offset of channel ``n`` is ``n - 1`` spacings toward
longer wavelengths, so its frequency is ``base_thz - (n - 1) * spacing``.
"""

import json
import logging
import os
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Dict, List, Mapping, Optional, Tuple

import networkx as nx
import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from dwdmqkd.nsca.errors import ChannelStateError, TopologyError

logger = logging.getLogger(__name__)

_TOPOLOGY_DIR = os.path.join(os.path.dirname(__file__), "topologies")
_NO_LIGHTPATH = -1


class ChannelKind(IntEnum):
    """State tag of a (link, channel) slot."""

    FREE = 0
    DATA = 1
    QUANTUM = 2


class LinkKind(Enum):
    MUX = "mux"
    DATA_ONLY = "data-only"


@dataclass(frozen=True)
class Span:
    """A bidirectional fibre pair between two nodes.

    Args:
        a (int): First endpoint.
        b (int): Second endpoint.
        length_km (float): Fibre length in km, shared by both directions.
        mux_fwd (bool): Whether the ``a -> b`` link multiplexes quantum channels.
        mux_bwd (bool): Whether the ``b -> a`` link multiplexes quantum channels.
    """

    a: int
    b: int
    length_km: float
    mux_fwd: bool = True
    mux_bwd: bool = False


@dataclass(frozen=True)
class TopologySpec:
    """Static description of a DWDM-QKD network.

    Args:
        nodes (int): Number of nodes, labelled ``0..nodes-1``.
        spans (Tuple[Span, ...]): Fibre spans; each one yields two directed links.
        channels_per_fiber (int): Channels on the grid of every fibre. Default: 8.
        base_thz (float): Frequency of channel 1 in THz. Default: 194.0.
        spacing_ghz (float): Grid spacing in GHz. Default: 200.
        name (str): Free-form label used in logs and metadata.
    """

    nodes: int
    spans: Tuple[Span, ...]
    channels_per_fiber: int = 8
    base_thz: float = 194.0
    spacing_ghz: float = 200.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))
        if self.channels_per_fiber < 2:
            raise TopologyError(
                f"channels_per_fiber must be at least 2, got {self.channels_per_fiber}"
            )
        if self.nodes < 2:
            raise TopologyError(f"A topology needs at least 2 nodes, got {self.nodes}")
        if self.spacing_ghz <= 0 or self.base_thz <= 0:
            raise TopologyError("Channel grid base frequency and spacing must be positive")
        if self.base_thz * 1e3 - (self.channels_per_fiber - 1) * self.spacing_ghz <= 0:
            raise TopologyError("Channel grid extends below zero frequency")
        seen = set()
        for span in self.spans:
            if span.length_km <= 0:
                raise TopologyError(
                    f"Span {span.a}-{span.b} has non-positive length {span.length_km}"
                )
            if span.a == span.b:
                raise TopologyError(f"Span {span.a}-{span.b} is a self loop")
            for node in (span.a, span.b):
                if not 0 <= node < self.nodes:
                    raise TopologyError(f"Span endpoint {node} outside 0..{self.nodes - 1}")
            key = frozenset((span.a, span.b))
            if key in seen:
                raise TopologyError(f"Duplicate span between {span.a} and {span.b}")
            seen.add(key)
        graph = nx.Graph()
        graph.add_nodes_from(range(self.nodes))
        graph.add_edges_from((span.a, span.b) for span in self.spans)
        if not nx.is_connected(graph):
            raise TopologyError(f"Topology {self.name or '<unnamed>'} is not connected")

    @property
    def channel_frequencies_hz(self) -> np.ndarray:
        """np.ndarray: Grid frequency of channels ``1..C`` in Hz, decreasing with index."""
        offsets = np.arange(self.channels_per_fiber) * self.spacing_ghz * 1e9
        return self.base_thz * 1e12 - offsets

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TopologySpec":
        """Builds a spec from the topology-file JSON structure."""
        try:
            spans = tuple(
                Span(
                    a=int(s["a"]),
                    b=int(s["b"]),
                    length_km=float(s["length_km"]),
                    mux_fwd=bool(s.get("mux_fwd", True)),
                    mux_bwd=bool(s.get("mux_bwd", False)),
                )
                for s in data["spans"]
            )
        except (KeyError, TypeError) as e:
            raise TopologyError(f"Malformed span record: {e}") from e
        nodes = data.get("nodes")
        if nodes is None:
            nodes = 1 + max(max(s.a, s.b) for s in spans) if spans else 0
        grid = data.get("grid", {})
        return cls(
            nodes=int(nodes),
            spans=spans,
            channels_per_fiber=int(data.get("channels", 8)),
            base_thz=float(grid.get("base_thz", 194.0)),
            spacing_ghz=float(grid.get("spacing_ghz", 200.0)),
            name=str(data.get("name", "")),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "nodes": self.nodes,
            "channels": self.channels_per_fiber,
            "grid": {"base_thz": self.base_thz, "spacing_ghz": self.spacing_ghz},
            "spans": [
                {
                    "a": s.a,
                    "b": s.b,
                    "length_km": s.length_km,
                    "mux_fwd": s.mux_fwd,
                    "mux_bwd": s.mux_bwd,
                }
                for s in self.spans
            ],
        }


def load_topology(path: str) -> TopologySpec:
    """Reads a topology file.

    ``path`` may also name a shipped topology (``4node``, ``6node``, ``nsfnet14``).
    """
    if not os.path.exists(path) and not os.path.dirname(path):
        candidate = os.path.join(_TOPOLOGY_DIR, f"{path}.json")
        if os.path.exists(candidate):
            path = candidate
    with open(path) as f:
        return TopologySpec.from_dict(json.load(f))


def builtin_topology(name: str) -> TopologySpec:
    """TopologySpec: One of the shipped topologies, by file stem."""
    path = os.path.join(_TOPOLOGY_DIR, f"{name}.json")
    if not os.path.exists(path):
        available = sorted(f[:-5] for f in os.listdir(_TOPOLOGY_DIR) if f.endswith(".json"))
        raise TopologyError(f"Unknown topology {name}; available: {available}")
    return load_topology(path)


def with_uniform_length(spec: TopologySpec, length_km: float) -> TopologySpec:
    """Returns a copy of ``spec`` with every span set to ``length_km``."""
    spans = tuple(
        Span(s.a, s.b, float(length_km), s.mux_fwd, s.mux_bwd) for s in spec.spans
    )
    return TopologySpec(
        spec.nodes, spans, spec.channels_per_fiber, spec.base_thz, spec.spacing_ghz, spec.name
    )


def with_random_lengths(
    spec: TopologySpec, low_km: float, high_km: float, seed: int
) -> TopologySpec:
    """Returns a copy of ``spec`` with span lengths drawn uniformly from ``[low_km, high_km]``."""
    rng = np.random.default_rng(seed)
    lengths = rng.uniform(low_km, high_km, size=len(spec.spans))
    spans = tuple(
        Span(s.a, s.b, float(round(length, 3)), s.mux_fwd, s.mux_bwd)
        for s, length in zip(spec.spans, lengths)
    )
    return TopologySpec(
        spec.nodes, spans, spec.channels_per_fiber, spec.base_thz, spec.spacing_ghz, spec.name
    )


@dataclass(frozen=True)
class Link:
    """A directed fibre link. Span ``i`` yields links ``2i`` (a->b) and ``2i+1`` (b->a)."""

    index: int
    src: int
    dst: int
    length_km: float
    kind: LinkKind

    @property
    def is_mux(self) -> bool:
        return self.kind is LinkKind.MUX


@dataclass(frozen=True)
class ChannelState:
    """Snapshot of one (link, channel) slot.

    ``rht`` and ``power_mw`` are zero unless the slot carries data.
    """

    kind: ChannelKind
    rht: int = 0
    power_mw: float = 0.0
    lightpath_id: Optional[int] = None


class Network:
    """Mutable channel occupancy of a topology, advanced one timeslot at a time.

    A network has a single owner; ``copy`` produces an independent snapshot for
    Monte-Carlo look-ahead.

    Args:
        spec (TopologySpec): The topology to instantiate.

    Examples:
        >>> from dwdmqkd.nsca.network import Network, builtin_topology
        >>> net = Network(builtin_topology("4node"))
        >>> len(net.links)
        8
    """

    def __init__(self, spec: TopologySpec):
        links = []
        for i, span in enumerate(spec.spans):
            links.append(
                Link(
                    2 * i,
                    span.a,
                    span.b,
                    span.length_km,
                    LinkKind.MUX if span.mux_fwd else LinkKind.DATA_ONLY,
                )
            )
            links.append(
                Link(
                    2 * i + 1,
                    span.b,
                    span.a,
                    span.length_km,
                    LinkKind.MUX if span.mux_bwd else LinkKind.DATA_ONLY,
                )
            )
        graph = nx.DiGraph()
        graph.add_nodes_from(range(spec.nodes))
        for link in links:
            graph.add_edge(link.src, link.dst, link=link.index)

        n_links, n_channels = len(links), spec.channels_per_fiber
        self._spec = spec
        self._links: Tuple[Link, ...] = tuple(links)
        self._graph = graph
        self._frequencies = spec.channel_frequencies_hz
        self._kind = np.zeros((n_links, n_channels), dtype=np.int8)
        self._rht = np.zeros((n_links, n_channels), dtype=np.int64)
        self._power = np.zeros((n_links, n_channels), dtype=np.float64)
        self._lightpath = np.full((n_links, n_channels), _NO_LIGHTPATH, dtype=np.int64)
        self._timeslot = 0
        self._paths: Dict[Tuple[int, int], Tuple[int, ...]] = {}
        self._hops = dict(nx.all_pairs_shortest_path_length(graph))

    @property
    def spec(self) -> TopologySpec:
        return self._spec

    @property
    def links(self) -> Tuple[Link, ...]:
        """Tuple[Link, ...]: Directed links in link-index order."""
        return self._links

    @property
    def mux_links(self) -> Tuple[Link, ...]:
        return tuple(link for link in self._links if link.is_mux)

    @property
    def n_nodes(self) -> int:
        return self._spec.nodes

    @property
    def n_channels(self) -> int:
        return self._spec.channels_per_fiber

    @property
    def timeslot(self) -> int:
        return self._timeslot

    @property
    def graph(self) -> nx.DiGraph:
        """nx.DiGraph: Directed graph whose edges carry the ``link`` index attribute."""
        return self._graph

    @property
    def frequencies_hz(self) -> np.ndarray:
        """np.ndarray: Grid frequencies of channels ``1..C`` in Hz."""
        return self._frequencies

    def wavelength_m(self, channel: int) -> float:
        """float: Vacuum wavelength of ``channel`` in metres."""
        return SPEED_OF_LIGHT / self._frequencies[self._column(channel)]

    @property
    def kinds(self) -> np.ndarray:
        """np.ndarray: Read-only (links, channels) array of :class:`ChannelKind` values."""
        view = self._kind.view()
        view.flags.writeable = False
        return view

    @property
    def rht(self) -> np.ndarray:
        """np.ndarray: Read-only (links, channels) residual holding times; 0 unless Data."""
        view = self._rht.view()
        view.flags.writeable = False
        return view

    @property
    def power_mw(self) -> np.ndarray:
        """np.ndarray: Read-only (links, channels) launch powers in mW; 0 unless Data."""
        view = self._power.view()
        view.flags.writeable = False
        return view

    def link(self, index: int) -> Link:
        return self._links[index]

    def channel(self, link: int, channel: int) -> ChannelState:
        """ChannelState: The state of ``channel`` on ``link``."""
        col = self._column(channel)
        kind = ChannelKind(int(self._kind[link, col]))
        if kind is ChannelKind.DATA:
            return ChannelState(
                kind,
                int(self._rht[link, col]),
                float(self._power[link, col]),
                int(self._lightpath[link, col]),
            )
        return ChannelState(kind)

    def data_channels(self, link: int) -> Tuple[np.ndarray, np.ndarray]:
        """Occupied data channels of a link.

        Returns:
            Tuple[np.ndarray, np.ndarray]: 1-based channel indices and their powers in mW.
        """
        cols = np.flatnonzero(self._kind[link] == ChannelKind.DATA)
        return cols + 1, self._power[link, cols].copy()

    def quantum_channels(self, link: int) -> Tuple[int, ...]:
        """Tuple[int, ...]: 1-based indices of the quantum channels placed on ``link``."""
        return tuple(int(c) + 1 for c in np.flatnonzero(self._kind[link] == ChannelKind.QUANTUM))

    def available_channels(self, link: int) -> Tuple[int, ...]:
        """Channels a quantum channel could be placed on.

        Args:
            link (int): Index of a MUX link.

        Returns:
            Tuple[int, ...]: 1-based indices of the Free channels of ``link``, ascending.
        """
        self._require_mux(link)
        return tuple(int(c) + 1 for c in np.flatnonzero(self._kind[link] == ChannelKind.FREE))

    def is_free(self, link: int, channel: int) -> bool:
        return self._kind[link, self._column(channel)] == ChannelKind.FREE

    def occupy_data(
        self, link: int, channel: int, rht: int, power_mw: float, lightpath_id: int
    ) -> None:
        """Moves a Free slot to Data."""
        col = self._column(channel)
        if self._kind[link, col] != ChannelKind.FREE:
            raise ChannelStateError(f"Channel {channel} on link {link} is not free")
        if rht < 1:
            raise ChannelStateError(f"Residual holding time must be at least 1, got {rht}")
        self._kind[link, col] = ChannelKind.DATA
        self._rht[link, col] = rht
        self._power[link, col] = power_mw
        self._lightpath[link, col] = lightpath_id

    def place_quantum(self, link: int, channel: int) -> None:
        """Moves a Free slot of a MUX link to Quantum."""
        self._require_mux(link)
        col = self._column(channel)
        if self._kind[link, col] != ChannelKind.FREE:
            raise ChannelStateError(
                f"Cannot place a quantum channel on busy channel {channel} of link {link}"
            )
        self._kind[link, col] = ChannelKind.QUANTUM

    def release_quantum(self, link: int, channel: Optional[int] = None) -> Tuple[int, ...]:
        """Frees the quantum channel ``channel`` of ``link``, or all of them when omitted.

        Returns:
            Tuple[int, ...]: The released channels.
        """
        released = self.quantum_channels(link) if channel is None else (channel,)
        for ch in released:
            col = self._column(ch)
            if self._kind[link, col] != ChannelKind.QUANTUM:
                raise ChannelStateError(f"Channel {ch} on link {link} holds no quantum channel")
            self._kind[link, col] = ChannelKind.FREE
        return released

    def advance_timeslot(self) -> List[Tuple[int, int]]:
        """Ticks the clock by one slot.

        Every Data channel loses one slot of residual holding time; those that reach
        zero become Free. Quantum channels are untouched.

        Returns:
            List[Tuple[int, int]]: Released ``(link, channel)`` pairs in link-then-channel
            order.
        """
        data = self._kind == ChannelKind.DATA
        self._rht[data] -= 1
        expired = data & (self._rht <= 0)
        rows, cols = np.nonzero(expired)
        self._kind[expired] = ChannelKind.FREE
        self._rht[expired] = 0
        self._power[expired] = 0.0
        self._lightpath[expired] = _NO_LIGHTPATH
        self._timeslot += 1
        return [(int(r), int(c) + 1) for r, c in zip(rows, cols)]

    def active_lightpaths(self) -> Dict[int, int]:
        """Dict[int, int]: Hop count of every lightpath holding at least one channel."""
        held = self._lightpath[self._lightpath != _NO_LIGHTPATH]
        ids, counts = np.unique(held, return_counts=True)
        return {int(i): int(n) for i, n in zip(ids, counts)}

    def shortest_path(self, src: int, dst: int) -> Tuple[int, ...]:
        """Minimum-hop route between two nodes.

        Ties are broken toward the lexicographically smallest node sequence.

        Args:
            src (int): Source node.
            dst (int): Destination node, different from ``src``.

        Returns:
            Tuple[int, ...]: Link indices from ``src`` to ``dst``.
        """
        key = (src, dst)
        if key in self._paths:
            return self._paths[key]
        for node in key:
            if node not in self._hops:
                raise TopologyError(f"Unknown node {node}")
        if src == dst:
            raise ValueError(f"Source and destination are the same node {src}")
        if dst not in self._hops[src]:
            raise TopologyError(f"Node {dst} is unreachable from {src}")
        path = []
        node = src
        while node != dst:
            remaining = self._hops[node][dst]
            nxt = min(
                v for v in self._graph.successors(node) if self._hops[v].get(dst) == remaining - 1
            )
            path.append(self._graph.edges[node, nxt]["link"])
            node = nxt
        self._paths[key] = tuple(path)
        return self._paths[key]

    def node_pairs(self) -> List[Tuple[int, int]]:
        """List[Tuple[int, int]]: All ordered ``(src, dst)`` pairs with ``src != dst``."""
        return [(s, d) for s in range(self.n_nodes) for d in range(self.n_nodes) if s != d]

    def paths_through(self, link: int) -> List[Tuple[int, ...]]:
        """List[Tuple[int, ...]]: Shortest paths of all ordered node pairs that use ``link``."""
        return [p for p in (self.shortest_path(s, d) for s, d in self.node_pairs()) if link in p]

    def copy(self) -> "Network":
        """Network: An independent deep copy sharing only immutable topology data."""
        clone = Network.__new__(Network)
        clone._spec = self._spec
        clone._links = self._links
        clone._graph = self._graph
        clone._frequencies = self._frequencies
        clone._kind = self._kind.copy()
        clone._rht = self._rht.copy()
        clone._power = self._power.copy()
        clone._lightpath = self._lightpath.copy()
        clone._timeslot = self._timeslot
        clone._paths = self._paths
        clone._hops = self._hops
        return clone

    def to_bytes(self) -> bytes:
        """bytes: Serialized occupancy state, byte-comparable across identical histories."""
        header = np.array([self._timeslot, *self._kind.shape], dtype=np.int64)
        return b"".join(
            a.tobytes() for a in (header, self._kind, self._rht, self._power, self._lightpath)
        )

    def _column(self, channel: int) -> int:
        if not 1 <= channel <= self.n_channels:
            raise ChannelStateError(f"Channel {channel} outside 1..{self.n_channels}")
        return channel - 1

    def _require_mux(self, link: int) -> None:
        if not self._links[link].is_mux:
            raise ChannelStateError(f"Link {link} is a data-only link")


def build_topology(spec: TopologySpec) -> Network:
    """Network: A fresh network with every channel Free at timeslot 0."""
    network = Network(spec)
    logger.debug(
        "Built %s: %d nodes, %d directed links, %d channels",
        spec.name or "topology",
        spec.nodes,
        len(network.links),
        spec.channels_per_fiber,
    )
    return network
