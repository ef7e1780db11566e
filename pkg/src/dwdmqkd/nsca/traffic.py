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

"""Poisson classical traffic and shortest-path / first-fit provisioning."""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

from dwdmqkd.nsca.network import ChannelKind, Network

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["slot", "src", "dst", "holding", "power_dbm"]


def derive_seed(*keys: int) -> int:
    """int: A 63-bit seed derived deterministically from integer ``keys``."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class TrafficParams:
    """Offered classical load.

    Args:
        load_erlang (float): Offered traffic load TL = lambda / mu in Erlang.
        mean_holding_slots (float): Mean holding time 1/mu in timeslots. Default: 10.
        power_range_dbm (Tuple[float, float]): Launch power range. Default: (-5, 5).
        seed (int): Seed of the arrival stream. Default: 0.
    """

    load_erlang: float
    mean_holding_slots: float = 10.0
    power_range_dbm: Tuple[float, float] = (-5.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "power_range_dbm", tuple(self.power_range_dbm))
        if self.load_erlang < 0:
            raise ValueError(f"Traffic load must be non-negative, got {self.load_erlang}")
        if self.mean_holding_slots < 1:
            raise ValueError(
                f"Mean holding time must be at least one slot, got {self.mean_holding_slots}"
            )
        low, high = self.power_range_dbm
        if low > high:
            raise ValueError(f"Invalid power range [{low}, {high}] dBm")
        if self.seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")

    @property
    def arrival_rate(self) -> float:
        """float: Mean number of arrivals per slot, lambda = TL * mu."""
        return self.load_erlang / self.mean_holding_slots


@dataclass(frozen=True)
class Request:
    src: int
    dst: int
    arrival_slot: int
    holding_slots: int
    power_dbm: float

    @property
    def power_mw(self) -> float:
        return 10.0 ** (self.power_dbm / 10.0)


@dataclass(frozen=True)
class Lightpath:
    """A provisioned request: one wavelength along its whole path."""

    id: int
    path: Tuple[int, ...]
    wavelength: int
    expiry_slot: int
    power_dbm: float


@dataclass(frozen=True)
class Blocked:
    """Provisioning outcome when no wavelength is free end to end."""

    request: Request


def generate_arrivals(params: TrafficParams, n_nodes: int, slot: int) -> List[Request]:
    """Draws the requests arriving in ``slot``.

    The draw depends only on ``(params.seed, slot)``, so any slot can be replayed
    in isolation and every consumer of the same seed sees the same stream.

    Args:
        params (TrafficParams): Offered load.
        n_nodes (int): Number of network nodes; pairs are uniform over ordered pairs.
        slot (int): The timeslot.

    Returns:
        List[Request]: Requests in generation order.
    """
    if params.load_erlang == 0:
        return []
    rng = np.random.default_rng([params.seed, slot])
    count = int(rng.poisson(params.arrival_rate))
    if count == 0:
        return []
    pair_index = rng.integers(0, n_nodes * (n_nodes - 1), size=count)
    holding = rng.geometric(1.0 / params.mean_holding_slots, size=count)
    low, high = params.power_range_dbm
    power = rng.uniform(low, high, size=count)
    requests = []
    for k in range(count):
        src, offset = divmod(int(pair_index[k]), n_nodes - 1)
        dst = offset if offset < src else offset + 1
        requests.append(Request(src, dst, slot, int(holding[k]), float(power[k])))
    return requests


def provision(network: Network, request: Request, lightpath_id: int) -> Union[Lightpath, Blocked]:
    """Routes ``request`` on its shortest path with first-fit wavelength assignment.

    A wavelength qualifies only if it is Free on every link of the path; Data and
    Quantum channels are both unavailable. On failure nothing is mutated.

    Args:
        network (Network): Network at the request's arrival slot.
        request (Request): The request.
        lightpath_id (int): Identifier recorded on every occupied channel.

    Returns:
        Union[Lightpath, Blocked]: The new lightpath, or ``Blocked``.
    """
    if request.arrival_slot != network.timeslot:
        raise ValueError(
            f"Request arrives in slot {request.arrival_slot}, network is at {network.timeslot}"
        )
    path = network.shortest_path(request.src, request.dst)
    free = np.all(network.kinds[list(path)] == ChannelKind.FREE, axis=0)
    candidates = np.flatnonzero(free)
    if candidates.size == 0:
        return Blocked(request)
    wavelength = int(candidates[0]) + 1
    power_mw = request.power_mw
    for link in path:
        network.occupy_data(link, wavelength, request.holding_slots, power_mw, lightpath_id)
    return Lightpath(
        lightpath_id,
        path,
        wavelength,
        request.arrival_slot + request.holding_slots,
        request.power_dbm,
    )


class PoissonTraffic:
    """Traffic source backed by :func:`generate_arrivals`."""

    def __init__(self, params: TrafficParams, n_nodes: int):
        self._params = params
        self._n_nodes = n_nodes

    @property
    def params(self) -> TrafficParams:
        return self._params

    def arrivals(self, slot: int) -> List[Request]:
        return generate_arrivals(self._params, self._n_nodes, slot)


class TraceTraffic:
    """Traffic source replaying a recorded request trace."""

    def __init__(self, requests: Iterable[Request]):
        by_slot: Dict[int, List[Request]] = defaultdict(list)
        for request in requests:
            by_slot[request.arrival_slot].append(request)
        self._by_slot = dict(by_slot)

    def arrivals(self, slot: int) -> List[Request]:
        return list(self._by_slot.get(slot, ()))

    @property
    def last_slot(self) -> int:
        return max(self._by_slot, default=-1)


@dataclass
class Provisioner:
    """Serves requests slot by slot and keeps blocking statistics."""

    next_id: int = 1
    offered: int = 0
    blocked: int = 0
    lightpaths: Dict[int, Lightpath] = field(default_factory=dict)

    def serve(self, network: Network, requests: Iterable[Request]) -> List[Lightpath]:
        """Provisions ``requests`` in order and forgets lightpaths that have expired."""
        now = network.timeslot
        for lp_id in [i for i, lp in self.lightpaths.items() if lp.expiry_slot <= now]:
            del self.lightpaths[lp_id]
        accepted = []
        for request in requests:
            self.offered += 1
            outcome = provision(network, request, self.next_id)
            self.next_id += 1
            if isinstance(outcome, Blocked):
                self.blocked += 1
                logger.debug("Blocked %d->%d at slot %d", request.src, request.dst, now)
                continue
            self.lightpaths[outcome.id] = outcome
            accepted.append(outcome)
        return accepted

    @property
    def blocking_probability(self) -> float:
        return self.blocked / self.offered if self.offered else 0.0


def write_trace(path: str, requests: Iterable[Request]) -> None:
    """Writes requests as a CSV trace with columns ``slot,src,dst,holding,power_dbm``."""
    frame = pd.DataFrame(
        [(r.arrival_slot, r.src, r.dst, r.holding_slots, r.power_dbm) for r in requests],
        columns=TRACE_COLUMNS,
    )
    frame.to_csv(path, index=False)


def read_trace(path: str) -> List[Request]:
    """List[Request]: Requests of a CSV trace, in file order."""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = set(TRACE_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"Trace {path} lacks columns {sorted(missing)}")
    return [
        Request(int(row.src), int(row.dst), int(row.slot), int(row.holding), float(row.power_dbm))
        for row in frame.itertuples(index=False)
    ]


def record_arrivals(params: TrafficParams, n_nodes: int, slots: int) -> List[Request]:
    """List[Request]: All Poisson arrivals of slots ``0..slots-1``, e.g. to build a trace."""
    return [r for slot in range(slots) for r in generate_arrivals(params, n_nodes, slot)]
