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

"""Monte-Carlo labelling of candidate quantum channels and training-set files.

At every reallocation event the candidates of a link are scored against
``n_sets`` random futures. Within one future every candidate sees the same
request stream, and the candidate with the best mean key rate over the window
scores a point. A candidate's label ``p_opt`` is its share of the points.
"""

import dataclasses
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dwdmqkd.nsca.config import ScenarioConfig
from dwdmqkd.nsca.errors import ChannelStateError, SchemaMismatchError
from dwdmqkd.nsca.features import FeatureSchema, FeatureSubset, extract_candidates, feature_schema
from dwdmqkd.nsca.network import Network, build_topology
from dwdmqkd.nsca.physics import QkdParams, evaluate_link_skr
from dwdmqkd.nsca.traffic import (
    PoissonTraffic,
    Provisioner,
    Request,
    TrafficParams,
    derive_seed,
    generate_arrivals,
)

logger = logging.getLogger(__name__)

EVENT_COLUMN = "event"
TARGET_COLUMN = "p_opt"

_LOOKAHEAD_FIRST_ID = 1 << 40
_LOG_EVERY_EVENTS = 100

ArrivalSource = Callable[[int], List[Request]]


@dataclass(frozen=True)
class McConfig:
    """Monte-Carlo labelling settings.

    Args:
        n_sets (int): Random futures per event. Default: 200.
        ts (int): Window length in slots. Default: 10.
        seed (int): Root seed of the futures. Default: 0.
        workers (int): Processes drawing futures in parallel. Default: 1.
    """

    n_sets: int = 200
    ts: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_sets < 1:
            raise ValueError(f"n_sets must be at least 1, got {self.n_sets}")
        if self.ts < 1:
            raise ValueError(f"Window must be at least 1 slot, got {self.ts}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")


@dataclass(frozen=True)
class TrainingRow:
    event: int
    features: np.ndarray
    p_opt: float


def future_seed(mc: McConfig, slot: int, link: int, draw: int) -> int:
    """int: Seed of future ``draw`` for the event at ``(slot, link)``."""
    return derive_seed(mc.seed, slot, link, draw)


def window_mean_skr(
    network: Network,
    link: int,
    channel: int,
    arrivals: ArrivalSource,
    window: int,
    params: QkdParams,
) -> float:
    """Mean key rate of a quantum channel on ``channel`` over the next ``window`` slots.

    The snapshot is copied, the channel is placed, and slots ``t+1..t+window`` are
    played with the requests of ``arrivals``. Existing lightpaths keep running.

    Args:
        network (Network): Snapshot at slot ``t``, the link's quantum channel released.
        link (int): MUX link.
        channel (int): Free channel of ``link``.
        arrivals (ArrivalSource): Requests of a slot, by slot number.
        window (int): Number of slots to play.
        params (QkdParams): Physical constants.

    Returns:
        float: Mean key rate in bps.
    """
    future = network.copy()
    future.place_quantum(link, channel)
    provisioner = Provisioner(next_id=_LOOKAHEAD_FIRST_ID)
    total = 0.0
    for _ in range(window):
        future.advance_timeslot()
        provisioner.serve(future, arrivals(future.timeslot))
        total += evaluate_link_skr(future, link, channel, params).rate_bps
    return total / window


def window_mean_skrs(
    network: Network,
    link: int,
    candidates: Sequence[int],
    arrivals: ArrivalSource,
    window: int,
    params: QkdParams,
) -> np.ndarray:
    """Window-mean key rate of every candidate under one request stream.

    The window is first played once with no quantum channel on the candidates.
    A candidate that no data lightpath takes on ``link`` during that replay cannot
    change any first-fit decision, so its rate is read off the shared replay;
    the others are played again with the quantum channel in place, as
    :func:`window_mean_skr` does.

    Returns:
        np.ndarray: Mean key rate in bps per candidate, in ``candidates`` order.
    """
    start = network.timeslot
    requests = [arrivals(start + step) for step in range(1, window + 1)]

    def replayed(slot: int) -> List[Request]:
        return requests[slot - start - 1]

    shared = network.copy()
    provisioner = Provisioner(next_id=_LOOKAHEAD_FIRST_ID)
    untouched = set(candidates)
    totals = dict.fromkeys(candidates, 0.0)
    for slot_requests in requests:
        shared.advance_timeslot()
        provisioner.serve(shared, slot_requests)
        untouched.difference_update(int(ch) for ch in shared.data_channels(link)[0])
        for ch in untouched:
            shared.place_quantum(link, ch)
            totals[ch] += evaluate_link_skr(shared, link, ch, params).rate_bps
            shared.release_quantum(link, ch)
    return np.array(
        [
            totals[ch] / window
            if ch in untouched
            else window_mean_skr(network, link, ch, replayed, window, params)
            for ch in candidates
        ]
    )


def best_candidate(
    network: Network,
    link: int,
    candidates: Sequence[int],
    arrivals: ArrivalSource,
    window: int,
    params: QkdParams,
) -> int:
    """int: Candidate with the highest window-mean key rate; ties go to the lowest index."""
    rates = window_mean_skrs(network, link, candidates, arrivals, window, params)
    return int(candidates[int(np.argmax(rates))])


def _draw_winner(
    network: Network,
    link: int,
    candidates: Tuple[int, ...],
    traffic: TrafficParams,
    seed: int,
    window: int,
    params: QkdParams,
) -> int:
    draw = dataclasses.replace(traffic, seed=seed)
    n_nodes = network.n_nodes

    def arrivals(slot: int) -> List[Request]:
        return generate_arrivals(draw, n_nodes, slot)

    return best_candidate(network, link, candidates, arrivals, window, params)


def monte_carlo_label(
    network: Network,
    link: int,
    mc: McConfig,
    traffic: TrafficParams,
    params: QkdParams,
    executor: Optional[ProcessPoolExecutor] = None,
) -> Dict[int, float]:
    """Estimates how often each available channel is the best quantum channel.

    Args:
        network (Network): Snapshot with the link's quantum channel released.
        link (int): MUX link being reallocated.
        mc (McConfig): Number of futures, window and seed.
        traffic (TrafficParams): Load of the futures; its seed is replaced per draw.
        params (QkdParams): Physical constants.
        executor (Optional[ProcessPoolExecutor]): Pool for the draws. Default: run
            in this process.

    Returns:
        Dict[int, float]: ``p_opt`` per candidate channel, ascending by channel.
    """
    candidates = network.available_channels(link)
    if not candidates:
        raise ChannelStateError(f"No channel available on link {link}")
    counts = dict.fromkeys(candidates, 0)
    if len(candidates) == 1:
        return {candidates[0]: 1.0}
    seeds = [future_seed(mc, network.timeslot, link, k) for k in range(mc.n_sets)]
    if executor is None:
        winners = [
            _draw_winner(network, link, candidates, traffic, s, mc.ts, params) for s in seeds
        ]
    else:
        n = len(seeds)
        winners = executor.map(
            _draw_winner,
            [network] * n,
            [link] * n,
            [candidates] * n,
            [traffic] * n,
            seeds,
            [mc.ts] * n,
            [params] * n,
            chunksize=max(1, n // (4 * mc.workers)),
        )
    for winner in winners:
        counts[winner] += 1
    return {ch: counts[ch] / mc.n_sets for ch in candidates}


class Dataset:
    """Labelled candidate rows grouped by reallocation event.

    Args:
        schema (FeatureSchema): Layout of the feature columns.
        events (np.ndarray): Event id of every row.
        features (np.ndarray): ``(rows, len(schema))`` feature matrix.
        p_opt (np.ndarray): Label of every row.
        metadata (Optional[Mapping[str, Any]]): Provenance kept in the sidecar file.
    """

    def __init__(
        self,
        schema: FeatureSchema,
        events: np.ndarray,
        features: np.ndarray,
        p_opt: np.ndarray,
        metadata: Optional[Mapping[str, Any]] = None,
    ):
        features = np.asarray(features, dtype=float).reshape(-1, len(schema))
        events = np.asarray(events, dtype=np.int64)
        p_opt = np.asarray(p_opt, dtype=float)
        if not len(events) == len(features) == len(p_opt):
            raise ValueError(
                f"Row counts differ: {len(events)} events, {len(features)} feature rows,"
                f" {len(p_opt)} labels"
            )
        if p_opt.size and (p_opt.min() < 0 or p_opt.max() > 1):
            raise ValueError("p_opt labels must lie in [0, 1]")
        self._schema = schema
        self._events = events
        self._features = features
        self._p_opt = p_opt
        self._metadata = dict(metadata or {})

    @property
    def schema(self) -> FeatureSchema:
        return self._schema

    @property
    def events(self) -> np.ndarray:
        return self._events

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def p_opt(self) -> np.ndarray:
        return self._p_opt

    @property
    def metadata(self) -> Dict[str, Any]:
        return self._metadata

    @property
    def n_events(self) -> int:
        return int(np.unique(self._events).size)

    def __len__(self) -> int:
        return len(self._p_opt)

    def __iter__(self) -> Iterator[TrainingRow]:
        for event, row, label in zip(self._events, self._features, self._p_opt):
            yield TrainingRow(int(event), row, float(label))

    def event_groups(self) -> List[np.ndarray]:
        """List[np.ndarray]: Row indices of every event, in order of first appearance."""
        _, first, inverse = np.unique(self._events, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        return [np.flatnonzero(inverse == i) for i in order]

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self._schema,
            self._events[rows],
            self._features[rows],
            self._p_opt[rows],
            self._metadata,
        )

    def split(self, test_fraction: float, seed: int = 0) -> Tuple["Dataset", "Dataset"]:
        """Splits whole events into a training and a test part.

        Returns:
            Tuple[Dataset, Dataset]: ``(train, test)``.
        """
        if not 0 < test_fraction < 1:
            raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
        ids = np.unique(self._events)
        rng = np.random.default_rng(seed)
        test_ids = rng.choice(ids, size=max(1, int(round(test_fraction * ids.size))), replace=False)
        mask = np.isin(self._events, test_ids)
        return self.subset(np.flatnonzero(~mask)), self.subset(np.flatnonzero(mask))

    @classmethod
    def concat(cls, datasets: Sequence["Dataset"]) -> "Dataset":
        """Joins datasets of one schema, renumbering events to stay unique."""
        if not datasets:
            raise ValueError("Nothing to concatenate")
        schema = datasets[0].schema
        events, offset = [], 0
        for ds in datasets:
            schema.check(ds.schema)
            events.append(ds.events + offset)
            offset += int(ds.events.max()) + 1 if len(ds) else 0
        return cls(
            schema,
            np.concatenate(events),
            np.vstack([ds.features for ds in datasets]),
            np.concatenate([ds.p_opt for ds in datasets]),
            datasets[0].metadata,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self._features, columns=list(self._schema.names))
        frame.insert(0, EVENT_COLUMN, self._events)
        frame[TARGET_COLUMN] = self._p_opt
        return frame


def generate_datasets(
    scenario: ScenarioConfig,
    n_events: int,
    subsets: Sequence[FeatureSubset],
) -> Dict[FeatureSubset, Dataset]:
    """Runs the dynamic simulation and labels every reallocation event.

    Every ``ts`` slots each MUX link in turn releases its quantum channel; all its
    available channels become rows labelled by :func:`monte_carlo_label`, and the
    quantum channel is then placed on the best-labelled channel. The same events
    and labels are described in every requested feature subset.

    Args:
        scenario (ScenarioConfig): Topology, traffic, physics, window, seed,
            ``n_sets`` and ``workers``.
        n_events (int): Number of (slot, link) events to label.
        subsets (Sequence[FeatureSubset]): Feature subsets to build.

    Returns:
        Dict[FeatureSubset, Dataset]: ``sum(|available channels|)`` rows over
        ``n_events`` events, per subset.
    """
    if n_events < 1:
        raise ValueError(f"n_events must be at least 1, got {n_events}")
    subsets = [FeatureSubset(s) for s in subsets]
    if not subsets:
        raise ValueError("No feature subset requested")
    mc = McConfig(scenario.n_sets, scenario.ts, scenario.seed, scenario.workers)
    network = build_topology(scenario.topology)
    load = scenario.traffic.load_erlang
    traffic = dataclasses.replace(scenario.traffic, seed=scenario.seed)
    source = PoissonTraffic(traffic, network.n_nodes)
    provisioner = Provisioner()
    for link in network.mux_links:
        network.place_quantum(link.index, 1)

    events: List[np.ndarray] = []
    rows: Dict[FeatureSubset, List[np.ndarray]] = {s: [] for s in subsets}
    labels: List[np.ndarray] = []
    event = 0
    executor = ProcessPoolExecutor(mc.workers) if mc.workers > 1 else None
    try:
        for slot in itertools.count():
            if event >= n_events:
                break
            if slot:
                network.advance_timeslot()
            provisioner.serve(network, source.arrivals(slot))
            if slot == 0 or slot % mc.ts:
                continue
            for link in network.mux_links:
                if event >= n_events:
                    break
                network.release_quantum(link.index)
                candidates = network.available_channels(link.index)
                if not candidates:
                    logger.debug("No channel for link %d at slot %d", link.index, network.timeslot)
                    continue
                p_opt = monte_carlo_label(
                    network, link.index, mc, scenario.traffic, scenario.qkd, executor
                )
                for subset in subsets:
                    rows[subset].append(
                        extract_candidates(network, link.index, subset, candidates, load, mc.ts)
                    )
                events.append(np.full(len(candidates), event, dtype=np.int64))
                labels.append(np.array([p_opt[ch] for ch in candidates]))
                best = max(candidates, key=lambda ch: (p_opt[ch], -ch))
                network.place_quantum(link.index, best)
                event += 1
                if event % _LOG_EVERY_EVENTS == 0:
                    logger.info("Labelled %d/%d events", event, n_events)
    finally:
        if executor is not None:
            executor.shutdown()

    metadata = {
        "topology": scenario.topology.name,
        "load_erlang": load,
        "ts": mc.ts,
        "n_sets": mc.n_sets,
        "seed": scenario.seed,
        "slots": network.timeslot + 1,
    }
    logger.info("Generated %d rows over %d events", sum(len(r) for r in labels), event)
    all_events, all_labels = np.concatenate(events), np.concatenate(labels)
    return {
        s: Dataset(
            feature_schema(network, s), all_events, np.vstack(rows[s]), all_labels, metadata
        )
        for s in subsets
    }


def generate_dataset(
    scenario: ScenarioConfig,
    n_events: int,
    subset: FeatureSubset = FeatureSubset.S4,
) -> Dataset:
    """Dataset: :func:`generate_datasets` for a single feature subset."""
    subset = FeatureSubset(subset)
    return generate_datasets(scenario, n_events, [subset])[subset]


def metadata_path(path: str) -> str:
    return f"{path}.meta.json"


def write_dataset(dataset: Dataset, path: str) -> None:
    """Writes ``dataset`` as CSV plus a JSON sidecar describing its schema."""
    dataset.to_frame().to_csv(path, index=False)
    meta = {
        "schema": dataset.schema.to_dict(),
        "rows": len(dataset),
        "events": dataset.n_events,
        "provenance": dataset.metadata,
    }
    with open(metadata_path(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def read_dataset(path: str, schema: Optional[FeatureSchema] = None) -> Dataset:
    """Reads a dataset written by :func:`write_dataset`.

    Args:
        path (str): CSV file; its sidecar must sit next to it.
        schema (Optional[FeatureSchema]): Expected layout. Default: accept the
            sidecar's.

    Returns:
        Dataset: The rows of the file, in file order.
    """
    with open(metadata_path(path)) as f:
        meta = json.load(f)
    stored = FeatureSchema.from_dict(meta["schema"])
    if schema is not None:
        schema.check(stored)
    frame = pd.read_csv(path, float_precision="round_trip")
    expected = [EVENT_COLUMN, *stored.names, TARGET_COLUMN]
    if list(frame.columns) != expected:
        raise SchemaMismatchError(f"Columns of {path} do not match its feature schema")
    return Dataset(
        stored,
        frame[EVENT_COLUMN].to_numpy(),
        frame[list(stored.names)].to_numpy(dtype=float),
        frame[TARGET_COLUMN].to_numpy(dtype=float),
        meta.get("provenance"),
    )
