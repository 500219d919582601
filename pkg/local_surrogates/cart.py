"""Weighted CART regression trees.

Splits maximize weighted variance reduction. For 0/1 targets the weighted gini impurity
of a node is exactly twice its weighted variance, so the same criterion grows the gini
tree of a classification forest and leaf means are class-1 probabilities.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from local_surrogates.errors import InvalidInputError
from local_surrogates.numerics import RandomSource, as_matrix, check_finite

logger = logging.getLogger(__name__)

LEAF = -1
CRITERIA = ("variance", "gini")


@dataclass
class RegressionTree:
    max_depth: int | None = None
    min_leaf_weight: float = 1.0
    max_features: int | None = None
    criterion: str = "variance"
    # node arrays, filled by fit()
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    node_weight: list[float] = field(default_factory=list)
    node_depth: list[int] = field(default_factory=list)
    n_features: int = 0
    importances: NDArray[np.float64] | None = None

    def fit(
        self,
        X: NDArray,
        y: NDArray,
        sample_weight: NDArray | None = None,
        rng: RandomSource | None = None,
    ) -> "RegressionTree":
        if self.criterion not in CRITERIA:
            raise InvalidInputError(f"unknown split criterion '{self.criterion}'")
        X = as_matrix(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64).ravel()
        if n == 0 or y.shape[0] != n or w.shape[0] != n:
            raise InvalidInputError(
                f"invalid input: shapes X={X.shape}, y={y.shape}, w={w.shape} do not agree"
            )
        check_finite(X, y, w, names=["X", "y", "sample_weight"])
        if np.any(w < 0) or w.sum() <= 0:
            raise InvalidInputError("invalid input: sample weights must be nonnegative with a positive sum")
        if self.max_features is not None and self.max_features < d and rng is None:
            raise InvalidInputError("feature subsampling needs a random source")

        self.n_features = d
        for nodes in (self.feature, self.threshold, self.left, self.right, self.value,
                      self.node_weight, self.node_depth):
            nodes.clear()
        gains = np.zeros(d)
        # zero-weight rows never reach a node
        rows = np.flatnonzero(w > 0)
        self._grow(X, y, w, rows, 0, rng, gains)
        total = gains.sum()
        self.importances = gains / total if total > 0 else gains
        return self

    def _new_node(self, value: float, weight: float, depth: int) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        self.node_weight.append(weight)
        self.node_depth.append(depth)
        return len(self.feature) - 1

    def _grow(self, X, y, w, rows, depth, rng, gains) -> int:
        wn, yn = w[rows], y[rows]
        total = wn.sum()
        mean = float(wn @ yn / total)
        node = self._new_node(mean, float(total), depth)
        if self.max_depth is not None and depth >= self.max_depth:
            return node
        if total < 2 * self.min_leaf_weight:
            return node
        centered = yn - mean
        parent_sse = float(wn @ (centered * centered))
        if parent_sse <= 1e-14 * max(1.0, total):
            return node

        split = self._best_split(X[rows], centered, wn, parent_sse, rng)
        if split is None:
            return node
        f, thr, gain = split
        gains[f] += gain
        go_left = X[rows, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(X, y, w, rows[go_left], depth + 1, rng, gains)
        self.right[node] = self._grow(X, y, w, rows[~go_left], depth + 1, rng, gains)
        return node

    def _best_split(self, Xn, yc, wn, parent_sse, rng):
        d = Xn.shape[1]
        if self.max_features is not None and self.max_features < d:
            candidates = np.sort(rng.generator.choice(d, size=self.max_features, replace=False))
        else:
            candidates = np.arange(d)
        total_w = wn.sum()
        total_wy = wn @ yc
        total_wy2 = wn @ (yc * yc)
        best = None
        best_gain = 0.0
        # features ascending, thresholds ascending, strict improvement only:
        # ties go to the lowest feature index, then the lowest threshold
        for f in candidates:
            order = np.argsort(Xn[:, f], kind="stable")
            xs = Xn[order, f]
            ws = wn[order]
            ys = yc[order]
            cw = np.cumsum(ws)[:-1]
            cwy = np.cumsum(ws * ys)[:-1]
            cwy2 = np.cumsum(ws * ys * ys)[:-1]
            rw = total_w - cw
            valid = (xs[:-1] < xs[1:]) & (cw >= self.min_leaf_weight) & (rw >= self.min_leaf_weight)
            if not np.any(valid):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                sse_left = cwy2 - cwy * cwy / cw
                sse_right = (total_wy2 - cwy2) - (total_wy - cwy) ** 2 / rw
            gain = parent_sse - np.maximum(sse_left, 0.0) - np.maximum(sse_right, 0.0)
            gain = np.where(valid, gain, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > best_gain + 1e-12 * parent_sse:
                best_gain = float(gain[i])
                best = (int(f), float((xs[i] + xs[i + 1]) / 2.0), best_gain)
        return best

    def _check_fitted(self):
        if not self.feature:
            raise InvalidInputError("tree is not fitted")

    def apply(self, X: NDArray) -> NDArray[np.int64]:
        """Leaf node id reached by every row."""
        self._check_fitted()
        X = as_matrix(X)
        if X.shape[1] != self.n_features:
            raise InvalidInputError(
                f"invalid input: expected {self.n_features} features, got {X.shape[1]}"
            )
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = feature[nodes] != LEAF
        while np.any(active):
            f = feature[nodes[active]]
            go_left = X[rows[active], f] <= threshold[nodes[active]]
            nodes[active] = np.where(go_left, left[nodes[active]], right[nodes[active]])
            active = feature[nodes] != LEAF
        return nodes

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        return np.asarray(self.value)[self.apply(X)]

    @property
    def depth(self) -> int:
        self._check_fitted()
        return max(self.node_depth)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f == LEAF)

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_leaf_weight": self.min_leaf_weight,
            "max_features": self.max_features,
            "criterion": self.criterion,
            "n_features": self.n_features,
            "feature": list(self.feature),
            "threshold": list(self.threshold),
            "left": list(self.left),
            "right": list(self.right),
            "value": list(self.value),
            "node_weight": list(self.node_weight),
            "node_depth": list(self.node_depth),
            "importances": None if self.importances is None else self.importances.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RegressionTree":
        tree = cls(
            max_depth=payload["max_depth"],
            min_leaf_weight=payload["min_leaf_weight"],
            max_features=payload["max_features"],
            criterion=payload["criterion"],
        )
        tree.n_features = int(payload["n_features"])
        tree.feature = [int(v) for v in payload["feature"]]
        tree.threshold = [float(v) for v in payload["threshold"]]
        tree.left = [int(v) for v in payload["left"]]
        tree.right = [int(v) for v in payload["right"]]
        tree.value = [float(v) for v in payload["value"]]
        tree.node_weight = [float(v) for v in payload["node_weight"]]
        tree.node_depth = [int(v) for v in payload["node_depth"]]
        if payload["importances"] is not None:
            tree.importances = np.asarray(payload["importances"], dtype=np.float64)
        return tree
