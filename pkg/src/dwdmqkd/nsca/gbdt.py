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

"""Histogram-binned gradient-boosted regression trees with L2 loss.

Every feature is cut once into at most ``max_bin`` equal-frequency bins. Trees
grow leaf-wise: the leaf whose best split has the largest variance gain is split
next, until ``num_leaves`` leaves exist or no split keeps ``min_data_in_leaf`` rows
on both sides. A leaf predicts the mean residual of its rows.
"""

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dwdmqkd.nsca.errors import ModelFormatError, SchemaMismatchError
from dwdmqkd.nsca.features import FeatureSchema, FeatureVector

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
_LOG_EVERY_ITERATIONS = 50


@dataclass(frozen=True)
class GbdtParams:
    """Hyper-parameters of :func:`train`.

    Args:
        learning_rate (float): Shrinkage of every tree. Default: 0.1.
        n_iterations (int): Boosting rounds. Default: 500.
        num_leaves (int): Maximum leaves per tree. Default: 40.
        min_data_in_leaf (int): Minimum rows on each side of a split. Default: 20.
        max_bin (int): Maximum histogram bins per feature. Default: 100.
        max_depth (Optional[int]): Depth limit; must exceed ``log2(num_leaves)``.
        seed (int): Recorded with the model; training itself draws no random numbers.
        early_stopping_rounds (Optional[int]): Stop when the validation RMSE has not
            improved for this many rounds. Default: off.
    """

    learning_rate: float = 0.1
    n_iterations: int = 500
    num_leaves: int = 40
    min_data_in_leaf: int = 20
    max_bin: int = 100
    max_depth: Optional[int] = None
    seed: int = 0
    early_stopping_rounds: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if self.n_iterations < 0:
            raise ValueError(f"n_iterations must be non-negative, got {self.n_iterations}")
        if self.num_leaves < 2:
            raise ValueError(f"num_leaves must be at least 2, got {self.num_leaves}")
        if self.min_data_in_leaf < 1:
            raise ValueError(f"min_data_in_leaf must be at least 1, got {self.min_data_in_leaf}")
        if self.max_bin < 2:
            raise ValueError(f"max_bin must be at least 2, got {self.max_bin}")
        if self.max_depth is not None and self.max_depth <= math.log2(self.num_leaves):
            raise ValueError(
                f"max_depth {self.max_depth} must exceed log2(num_leaves)"
                f" = {math.log2(self.num_leaves):.2f}"
            )
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ValueError(
                f"early_stopping_rounds must be at least 1, got {self.early_stopping_rounds}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "n_iterations": self.n_iterations,
            "num_leaves": self.num_leaves,
            "min_data_in_leaf": self.min_data_in_leaf,
            "max_bin": self.max_bin,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "early_stopping_rounds": self.early_stopping_rounds,
        }


@dataclass(frozen=True)
class Tree:
    """A regression tree in flat arrays; node 0 is the root.

    Internal nodes send ``x[feature] <= threshold`` to ``left``. Leaves have
    ``feature == -1`` and carry ``value``. ``gain`` is the split gain of internal
    nodes and 0 for leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @property
    def depth(self) -> int:
        depths = {0: 0}
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depths[int(self.left[node])] = depths[node] + 1
                depths[int(self.right[node])] = depths[node] + 1
        return max(depths.values())

    def apply(self, features: np.ndarray) -> np.ndarray:
        """np.ndarray: Leaf reached by every row of ``features``."""
        node = np.zeros(len(features), dtype=np.int64)
        rows = np.arange(len(features))
        active = self.feature[node] >= 0
        while active.any():
            split = self.feature[node]
            go_left = features[rows, np.maximum(split, 0)] <= self.threshold[node]
            node = np.where(active, np.where(go_left, self.left[node], self.right[node]), node)
            active = self.feature[node] >= 0
        return node

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.value[self.apply(features)]

    def preorder(self) -> List[List[Any]]:
        """Nodes in preorder: ``[feature, threshold, gain]`` or ``[-1, value]``."""
        out = []
        stack = [0]
        while stack:
            node = stack.pop()
            if self.feature[node] < 0:
                out.append([-1, float(self.value[node])])
                continue
            out.append(
                [int(self.feature[node]), float(self.threshold[node]), float(self.gain[node])]
            )
            stack.append(int(self.right[node]))
            stack.append(int(self.left[node]))
        return out

    @classmethod
    def from_preorder(cls, nodes: Sequence[Sequence[Any]]) -> "Tree":
        feature, threshold, left, right, value, gain = [], [], [], [], [], []
        position = 0

        def build() -> int:
            nonlocal position
            if position >= len(nodes):
                raise ModelFormatError("Tree ends before all of its children are defined")
            record = nodes[position]
            position += 1
            index = len(feature)
            feature.append(int(record[0]))
            left.append(-1)
            right.append(-1)
            if record[0] < 0:
                threshold.append(0.0)
                value.append(float(record[1]))
                gain.append(0.0)
                return index
            threshold.append(float(record[1]))
            value.append(0.0)
            gain.append(float(record[2]))
            left[index] = build()
            right[index] = build()
            return index

        build()
        if position != len(nodes):
            raise ModelFormatError("Tree has trailing nodes")
        return cls(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=float),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=float),
            np.array(gain, dtype=float),
        )


@dataclass(frozen=True)
class GbdtModel:
    """A trained ensemble; prediction is ``base_score + learning_rate * sum(trees)``."""

    params: GbdtParams
    base_score: float
    trees: Tuple[Tree, ...]
    bounds: Tuple[np.ndarray, ...]
    schema: Optional[FeatureSchema] = None
    rmse_history: Tuple[float, ...] = field(default=())

    @property
    def n_features(self) -> int:
        return len(self.bounds)

    @property
    def fingerprint(self) -> Optional[str]:
        return self.schema.fingerprint if self.schema is not None else None


def bin_bounds(column: np.ndarray, max_bin: int) -> np.ndarray:
    """Upper bounds of the equal-frequency bins of one feature.

    A value ``x`` falls in bin ``b`` when ``bounds[b-1] < x <= bounds[b]``; values
    above the last bound form the final bin.

    Args:
        column (np.ndarray): Training values of the feature.
        max_bin (int): Maximum number of bins.

    Returns:
        np.ndarray: Strictly increasing bounds, at most ``max_bin - 1`` of them.
    """
    unique = np.unique(column)
    if unique.size <= max_bin:
        return unique[:-1].astype(float)
    quantiles = np.quantile(column, np.linspace(0.0, 1.0, max_bin + 1)[1:-1])
    bounds = np.unique(quantiles)
    return bounds[bounds < unique[-1]].astype(float)


def apply_bins(features: np.ndarray, bounds: Sequence[np.ndarray]) -> np.ndarray:
    """np.ndarray: Bin index of every value, as an ``int32`` matrix."""
    binned = np.empty(features.shape, dtype=np.int32)
    for j, b in enumerate(bounds):
        binned[:, j] = np.searchsorted(b, features[:, j], side="left")
    return binned


def rmse(predicted: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(predicted) - np.asarray(target)) ** 2)))


@dataclass(eq=False)
class _Leaf:
    node: int
    rows: np.ndarray
    depth: int
    sums: np.ndarray
    counts: np.ndarray
    split: Optional[Tuple[float, int, int]] = None


class _TreeGrower:
    """Grows one tree on binned features, best leaf first."""

    def __init__(self, binned: np.ndarray, bounds: Sequence[np.ndarray], params: GbdtParams):
        self._binned = binned
        self._bounds = bounds
        self._params = params
        self._n_features = binned.shape[1]
        n_bins = np.array([len(b) + 1 for b in bounds], dtype=np.int64)
        self._offsets = np.concatenate([[0], np.cumsum(n_bins)[:-1]])
        self._total_bins = int(n_bins.sum())
        self._feature_of = np.repeat(np.arange(self._n_features), n_bins)
        self._segment_start = np.repeat(self._offsets, n_bins)
        last = self._offsets + n_bins - 1
        self._splittable = np.ones(self._total_bins, dtype=bool)
        self._splittable[last] = False

    def _histogram(self, rows: np.ndarray, gradients: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        flat = (self._binned[rows] + self._offsets).ravel()
        weights = np.repeat(gradients[rows], self._n_features)
        sums = np.bincount(flat, weights=weights, minlength=self._total_bins)
        counts = np.bincount(flat, minlength=self._total_bins).astype(float)
        return sums, counts

    def _best_split(self, leaf: _Leaf) -> Optional[Tuple[float, int, int]]:
        max_depth = self._params.max_depth
        if max_depth is not None and leaf.depth >= max_depth:
            return None
        n = float(len(leaf.rows))
        if n < 2 * self._params.min_data_in_leaf:
            return None
        cum_sums = np.cumsum(leaf.sums)
        cum_counts = np.cumsum(leaf.counts)
        before_sums = np.concatenate([[0.0], cum_sums])[self._segment_start]
        before_counts = np.concatenate([[0.0], cum_counts])[self._segment_start]
        left_g = cum_sums - before_sums
        left_n = cum_counts - before_counts
        total_g = left_g[self._offsets[0] + len(self._bounds[0])]
        right_g = total_g - left_g
        right_n = n - left_n
        minimum = self._params.min_data_in_leaf
        valid = self._splittable & (left_n >= minimum) & (right_n >= minimum)
        if not valid.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = left_g**2 / left_n + right_g**2 / right_n - total_g**2 / n
        gain = np.where(valid, gain, -np.inf)
        position = int(np.argmax(gain))
        if not gain[position] > 0:
            return None
        feature = int(self._feature_of[position])
        return float(gain[position]), feature, position - int(self._offsets[feature])

    def grow(self, gradients: np.ndarray) -> Tuple[Tree, List[Tuple[np.ndarray, float]]]:
        """Fits a tree to ``gradients`` (the residuals).

        Returns:
            Tuple[Tree, List[Tuple[np.ndarray, float]]]: The tree, and the rows and
            value of each of its leaves.
        """
        feature, threshold, left, right, value, gain = [-1], [0.0], [-1], [-1], [0.0], [0.0]
        rows = np.arange(len(gradients))
        root = _Leaf(0, rows, 0, *self._histogram(rows, gradients))
        root.split = self._best_split(root)
        heap: List[Tuple[float, int, _Leaf]] = []
        leaves = [root]
        if root.split is not None:
            heapq.heappush(heap, (-root.split[0], 0, root))
        while heap and len(leaves) < self._params.num_leaves:
            _, _, leaf = heapq.heappop(heap)
            split_gain, f, b = leaf.split
            goes_left = self._binned[leaf.rows, f] <= b
            left_rows, right_rows = leaf.rows[goes_left], leaf.rows[~goes_left]
            small, large = (
                (left_rows, right_rows) if len(left_rows) <= len(right_rows) else
                (right_rows, left_rows)
            )
            small_hist = self._histogram(small, gradients)
            large_hist = (leaf.sums - small_hist[0], leaf.counts - small_hist[1])
            children = []
            for child_rows in (left_rows, right_rows):
                hist = small_hist if child_rows is small else large_hist
                node = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                gain.append(0.0)
                children.append(_Leaf(node, child_rows, leaf.depth + 1, *hist))
            feature[leaf.node] = f
            threshold[leaf.node] = float(self._bounds[f][b])
            gain[leaf.node] = split_gain
            left[leaf.node], right[leaf.node] = children[0].node, children[1].node
            leaves.remove(leaf)
            for child in children:
                leaves.append(child)
                child.split = self._best_split(child)
                if child.split is not None:
                    heapq.heappush(heap, (-child.split[0], child.node, child))
        assignments = []
        for leaf in leaves:
            leaf_value = float(np.mean(gradients[leaf.rows]))
            value[leaf.node] = leaf_value
            assignments.append((leaf.rows, leaf_value))
        tree = Tree(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=float),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=float),
            np.array(gain, dtype=float),
        )
        return tree, assignments


def _as_arrays(rows: Any) -> Tuple[np.ndarray, np.ndarray, Optional[FeatureSchema]]:
    schema = getattr(rows, "schema", None)
    if hasattr(rows, "features") and hasattr(rows, "p_opt"):
        return np.asarray(rows.features, dtype=float), np.asarray(rows.p_opt, dtype=float), schema
    rows = list(rows)
    if not rows:
        raise ValueError("Cannot train on an empty dataset")
    lengths = {len(r.features) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"Training rows have inconsistent feature lengths {sorted(lengths)}")
    features = np.vstack([np.asarray(r.features, dtype=float) for r in rows])
    return features, np.array([r.p_opt for r in rows], dtype=float), schema


def train(
    rows: Any,
    params: GbdtParams = GbdtParams(),
    schema: Optional[FeatureSchema] = None,
    valid: Any = None,
) -> GbdtModel:
    """Boosts regression trees on labelled rows.

    Args:
        rows: A :class:`~dwdmqkd.nsca.dataset.Dataset` or a sequence of training
            rows (objects with ``features`` and ``p_opt``).
        params (GbdtParams): Hyper-parameters.
        schema (Optional[FeatureSchema]): Layout of the features. Default: the
            dataset's, if it has one.
        valid: Validation rows in the same form, needed for early stopping.

    Returns:
        GbdtModel: The trained model.
    """
    features, target, own_schema = _as_arrays(rows)
    schema = schema or own_schema
    validation = None
    if valid is not None:
        valid_features, valid_target, _ = _as_arrays(valid)
        validation = (valid_features, valid_target)
    return train_arrays(features, target, params, schema, validation)


def train_arrays(
    features: np.ndarray,
    target: np.ndarray,
    params: GbdtParams = GbdtParams(),
    schema: Optional[FeatureSchema] = None,
    valid: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> GbdtModel:
    """:func:`train` on a feature matrix and a target vector."""
    features = np.asarray(features, dtype=float)
    target = np.asarray(target, dtype=float)
    if features.ndim != 2 or len(features) == 0:
        raise ValueError("Cannot train on an empty dataset")
    if len(target) != len(features):
        raise ValueError(f"{len(features)} feature rows but {len(target)} targets")
    if not np.all(np.isfinite(features)) or not np.all(np.isfinite(target)):
        raise ValueError("Training data contains non-finite values")
    if schema is not None and len(schema) != features.shape[1]:
        raise SchemaMismatchError(
            f"Rows have {features.shape[1]} features,"
            f" schema {schema.subset.value} has {len(schema)}"
        )
    if len(features) < 2 * params.min_data_in_leaf:
        raise ValueError(
            f"Need at least {2 * params.min_data_in_leaf} rows, got {len(features)}"
        )
    if params.early_stopping_rounds is not None and valid is None:
        raise ValueError("Early stopping needs a validation set")

    bounds = tuple(bin_bounds(features[:, j], params.max_bin) for j in range(features.shape[1]))
    binned = apply_bins(features, bounds)
    grower = _TreeGrower(binned, bounds, params)
    base = float(np.mean(target))
    predicted = np.full(len(target), base)
    valid_predicted = None if valid is None else np.full(len(valid[1]), base)
    trees: List[Tree] = []
    history: List[float] = []
    best_valid, best_round = math.inf, 0
    for iteration in range(params.n_iterations):
        tree, assignments = grower.grow(target - predicted)
        for leaf_rows, leaf_value in assignments:
            predicted[leaf_rows] += params.learning_rate * leaf_value
        trees.append(tree)
        history.append(rmse(predicted, target))
        if (iteration + 1) % _LOG_EVERY_ITERATIONS == 0:
            logger.info("Iteration %d: training RMSE %.6f", iteration + 1, history[-1])
        if valid is not None:
            valid_predicted += params.learning_rate * tree.predict(valid[0])
            score = rmse(valid_predicted, valid[1])
            if score < best_valid:
                best_valid, best_round = score, len(trees)
            elif (
                params.early_stopping_rounds is not None
                and len(trees) - best_round >= params.early_stopping_rounds
            ):
                logger.warning(
                    "Early stopping at iteration %d, keeping %d trees", len(trees), best_round
                )
                trees, history = trees[:best_round], history[:best_round]
                break
        if tree.n_leaves == 1:
            logger.debug("No split improves the residuals after %d iterations", len(trees))
            break
    return GbdtModel(params, base, tuple(trees), bounds, schema, tuple(history))


def _matrix(model: GbdtModel, vectors: Any) -> np.ndarray:
    if isinstance(vectors, FeatureVector):
        if model.schema is not None:
            model.schema.check(vectors.schema)
        vectors = vectors.values
    matrix = np.atleast_2d(np.asarray(vectors, dtype=float))
    if matrix.shape[1] != model.n_features:
        raise SchemaMismatchError(
            f"Model expects {model.n_features} features, got {matrix.shape[1]}"
        )
    return matrix


def predict_many(model: GbdtModel, vectors: Any) -> np.ndarray:
    """np.ndarray: Predictions for every row of a feature matrix."""
    matrix = _matrix(model, vectors)
    total = np.zeros(len(matrix))
    for tree in model.trees:
        total += tree.predict(matrix)
    return model.base_score + model.params.learning_rate * total


def predict(model: GbdtModel, vector: Union[FeatureVector, np.ndarray]) -> float:
    """Predicted ``p_opt`` of one feature vector; not clamped to [0, 1].

    Args:
        model (GbdtModel): The trained model.
        vector (Union[FeatureVector, np.ndarray]): A vector in the model's layout.

    Returns:
        float: ``base_score + learning_rate * sum of leaf values``.
    """
    return float(predict_many(model, vector)[0])


def feature_importance(model: GbdtModel) -> np.ndarray:
    """np.ndarray: Total split gain per feature divided by its maximum."""
    total = np.zeros(model.n_features)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(total, tree.feature[internal], tree.gain[internal])
    peak = total.max() if total.size else 0.0
    return total / peak if peak > 0 else total


def cross_validate(
    rows: Any, params: GbdtParams = GbdtParams(), folds: int = 10, seed: int = 0
) -> List[float]:
    """Held-out RMSE of each of ``folds`` folds.

    Rows of one reallocation event stay in the same fold when ``rows`` carries
    event ids.
    """
    if folds < 2:
        raise ValueError(f"Need at least 2 folds, got {folds}")
    features, target, schema = _as_arrays(rows)
    groups = np.asarray(getattr(rows, "events", np.arange(len(target))))
    ids = np.unique(groups)
    if ids.size < folds:
        raise ValueError(f"Cannot split {ids.size} groups into {folds} folds")
    fold_of = dict(zip(np.random.default_rng(seed).permutation(ids), np.arange(ids.size) % folds))
    assigned = np.array([fold_of[g] for g in groups])
    scores = []
    for k in range(folds):
        held = assigned == k
        model = train_arrays(features[~held], target[~held], params, schema)
        scores.append(rmse(predict_many(model, features[held]), target[held]))
        logger.info("Fold %d/%d: RMSE %.6f", k + 1, folds, scores[-1])
    return scores


def model_to_dict(model: GbdtModel) -> Dict[str, Any]:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "params": model.params.to_dict(),
        "schema": model.schema.to_dict() if model.schema is not None else None,
        "n_features": model.n_features,
        "base_score": model.base_score,
        "bounds": [[float(v) for v in b] for b in model.bounds],
        "rmse_history": list(model.rmse_history),
        "trees": [tree.preorder() for tree in model.trees],
    }


def model_from_dict(data: Dict[str, Any]) -> GbdtModel:
    try:
        version = data["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"Model format version {version} is not supported (expected"
                f" {MODEL_FORMAT_VERSION})"
            )
        schema = FeatureSchema.from_dict(data["schema"]) if data["schema"] else None
        bounds = tuple(np.array(b, dtype=float) for b in data["bounds"])
        if len(bounds) != data["n_features"]:
            raise ModelFormatError("Model bin bounds do not match its feature count")
        if schema is not None and len(schema) != len(bounds):
            raise ModelFormatError("Model schema does not match its feature count")
        trees = tuple(Tree.from_preorder(nodes) for nodes in data["trees"])
        for tree in trees:
            internal = tree.feature[tree.feature >= 0]
            if internal.size and internal.max() >= len(bounds):
                raise ModelFormatError("Model tree splits on an unknown feature")
        return GbdtModel(
            GbdtParams(**data["params"]),
            float(data["base_score"]),
            trees,
            bounds,
            schema,
            tuple(float(v) for v in data.get("rmse_history", ())),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ModelFormatError(f"Malformed model: {e}") from e


def persist_model(model: GbdtModel, path: str) -> None:
    """Writes ``model`` as versioned JSON; floats round-trip exactly."""
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path: str, schema: Optional[FeatureSchema] = None) -> GbdtModel:
    """Reads a model written by :func:`persist_model`.

    Args:
        path (str): Model file.
        schema (Optional[FeatureSchema]): Layout the caller will feed; checked
            against the stored fingerprint.

    Returns:
        GbdtModel: The model.
    """
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"Model file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ModelFormatError(f"Model file {path} does not hold a model")
    model = model_from_dict(data)
    if schema is not None:
        if model.schema is None:
            raise SchemaMismatchError(f"Model {path} carries no feature schema")
        model.schema.check(schema)
    return model
