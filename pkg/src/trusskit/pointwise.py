"""Pointwise surrogate (per-scalar random forests) and the mean-predictor baseline.

The pointwise surrogate flattens joint coordinates into one input vector and
trains an independent regression forest per output scalar (x and y
displacement of every joint), so it requires a fixed topology: every design
must share the same joint count, ordering, and member set. The mean baseline
predicts the per-joint mean displacement of the training set and is the floor
any useful model must beat.
"""

from __future__ import annotations

import numpy as np

from .datasets import Dataset
from .model import GraphSample, Truss


class TopologyError(Exception):
    """Designs with differing topologies were mixed in a fixed-topology model."""


# ---------------------------------------------------------------------------
# CART regression trees


def best_split(X: np.ndarray, y: np.ndarray):
    """Exhaustive best split by squared-error reduction.

    Returns ``(feature, threshold)`` or None when no feature separates the
    rows. Candidate thresholds are midpoints between consecutive distinct
    sorted values; the weighted child variance is minimized, with ties broken
    by the smallest sorted split position, then the smallest feature index.
    """
    m = X.shape[0]
    if m < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    left_sum = np.cumsum(ys, axis=0)[:-1]
    total = float(y.sum())
    k = np.arange(1, m, dtype=np.float64)[:, None]
    # Minimizing sum of child SSEs == maximizing T_L^2/n_L + T_R^2/n_R.
    score = left_sum**2 / k + (total - left_sum) ** 2 / (m - k)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    pos, feat = np.unravel_index(int(np.argmax(score)), score.shape)
    threshold = 0.5 * (xs[pos, feat] + xs[pos + 1, feat])
    if not (xs[pos, feat] <= threshold < xs[pos + 1, feat]):
        # Adjacent floats can collapse the midpoint onto the right value.
        threshold = xs[pos, feat]
    return int(feat), float(threshold)


class RegressionTree:
    """CART regression tree grown to purity (no depth limit), stored in arrays."""

    def __init__(self, min_samples_split: int = 2):
        self.min_samples_split = min_samples_split
        self.feature = np.empty(0, dtype=np.int64)
        self.threshold = np.empty(0)
        self.left = np.empty(0, dtype=np.int64)
        self.right = np.empty(0, dtype=np.int64)
        self.value = np.empty(0)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RegressionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feature) - 1

        stack = [(np.arange(X.shape[0]), new_node())]
        while stack:
            rows, node = stack.pop()
            y_node = y[rows]
            value[node] = float(y_node.mean())
            if rows.size < self.min_samples_split or np.all(y_node == y_node[0]):
                continue
            found = best_split(X[rows], y_node)
            if found is None:
                continue
            feat, thr = found
            mask = X[rows, feat] <= thr
            if not mask.any() or mask.all():
                continue
            feature[node] = feat
            threshold[node] = thr
            left_child, right_child = new_node(), new_node()
            left[node] = left_child
            right[node] = right_child
            stack.append((rows[mask], left_child))
            stack.append((rows[~mask], right_child))
        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            current = node[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]


class RandomForest:
    """Bagged regression trees: seeded bootstrap resamples, mean prediction.

    Defaults pin the common regression-forest settings: 100 trees, squared
    error criterion, all features considered per split, bootstrap resamples
    of the training size, nodes split down to purity.
    """

    def __init__(self, tree_count: int = 100, min_samples_split: int = 2, bootstrap: bool = True):
        self.tree_count = tree_count
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.trees: list[RegressionTree] = []

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("need a non-empty (m, d) design matrix")
        if y.shape != (X.shape[0],):
            raise ValueError(f"target shape {y.shape} does not match {X.shape[0]} rows")
        rng = np.random.default_rng(seed)
        self.trees = []
        for _ in range(self.tree_count):
            if self.bootstrap:
                rows = rng.integers(0, X.shape[0], size=X.shape[0])
            else:
                rows = np.arange(X.shape[0])
            self.trees.append(
                RegressionTree(self.min_samples_split).fit(X[rows], y[rows])
            )
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)


def fit_forest(X: np.ndarray, y: np.ndarray, seed: int = 0, tree_count: int = 100, bootstrap: bool = True) -> RandomForest:
    return RandomForest(tree_count=tree_count, bootstrap=bootstrap).fit(X, y, seed=seed)


# ---------------------------------------------------------------------------
# fixed-topology surrogates


def _topology_key(design) -> tuple:
    if isinstance(design, GraphSample):
        members = {(min(a, b), max(a, b)) for a, b in design.edges if a != b}
        return design.node_count, tuple(sorted(members))
    if isinstance(design, Truss):
        members = {(min(a, b), max(a, b)) for a, b in design.members}
        return design.joint_count, tuple(sorted(members))
    raise TypeError(f"expected GraphSample or Truss, got {type(design).__name__}")


def _coordinates(design) -> np.ndarray:
    if isinstance(design, GraphSample):
        return design.node_features[:, :2]
    return design.positions()


def _check_fixed_topology(samples) -> tuple:
    if not samples:
        raise ValueError("empty training set")
    key = _topology_key(samples[0])
    for sample in samples[1:]:
        if _topology_key(sample) != key:
            raise TopologyError(
                "pointwise models require a fixed topology; got designs with "
                "different joint counts or member sets"
            )
    return key


def _samples_of(data) -> list[GraphSample]:
    return list(data.samples) if isinstance(data, Dataset) else list(data)


class PointwiseSurrogate:
    """One regression forest per output scalar over flattened joint coordinates.

    Support and load flags are not used as inputs: with identically loaded
    fixed-topology designs they carry no information.
    """

    def __init__(self, topology_key: tuple, forests: list[RandomForest]):
        self.topology_key = topology_key
        self.forests = forests

    @property
    def joint_count(self) -> int:
        return self.topology_key[0]

    def predict(self, design) -> np.ndarray:
        if _topology_key(design) != self.topology_key:
            raise TopologyError("design topology does not match the fitted topology")
        x = _coordinates(design).reshape(1, -1)
        flat = np.array([forest.predict(x)[0] for forest in self.forests])
        return flat.reshape(self.joint_count, 2)


def fit_pointwise(train, seed: int = 0, tree_count: int = 100) -> PointwiseSurrogate:
    """Fit 2 * n_joints independent forests on flattened joint coordinates."""
    samples = _samples_of(train)
    key = _check_fixed_topology(samples)
    X = np.stack([_coordinates(s).ravel() for s in samples])
    Y = np.stack([s.targets.ravel() for s in samples])
    forests = [
        fit_forest(X, Y[:, k], seed=seed + k, tree_count=tree_count)
        for k in range(Y.shape[1])
    ]
    return PointwiseSurrogate(topology_key=key, forests=forests)


def predict_pointwise(model: PointwiseSurrogate, design) -> np.ndarray:
    return model.predict(design)


class MeanBaseline:
    """Predicts the per-joint, per-component mean displacement of the training set."""

    def __init__(self, topology_key: tuple, field: np.ndarray):
        self.topology_key = topology_key
        self.field = field

    def predict(self, design=None) -> np.ndarray:
        if design is not None and _topology_key(design) != self.topology_key:
            raise TopologyError("design topology does not match the fitted topology")
        return self.field.copy()


def fit_baseline(train) -> MeanBaseline:
    samples = _samples_of(train)
    key = _check_fixed_topology(samples)
    field = np.mean([s.targets for s in samples], axis=0)
    return MeanBaseline(topology_key=key, field=field)


def predict_baseline(model: MeanBaseline) -> np.ndarray:
    return model.predict()
