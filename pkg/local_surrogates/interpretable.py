"""Weighted interpretable surrogates: local ridge and shallow tree, plus the Stage 2 global baseline."""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from local_surrogates.blackbox import AuxiliaryDataset
from local_surrogates.cart import RegressionTree
from local_surrogates.errors import ArtifactError, DegenerateWeightsError, InvalidInputError
from local_surrogates.numerics import as_matrix, check_finite, weighted_ridge_fit
from local_surrogates.utils.artifact_store import read_artifact, write_artifact

LOCAL_KINDS = ("ridge", "shallow_tree")
DEFAULT_ALPHA = 1.0
MAX_TREE_DEPTH = 3
MIN_LEAF_WEIGHT = 1.0


@dataclass
class LocalModel:
    kind: str
    n_features: int
    coef: NDArray[np.float64] | None = None
    intercept: float = 0.0
    alpha: float = DEFAULT_ALPHA
    tree: RegressionTree | None = None
    weight_sum: float = 0.0
    n_selected: int = 0

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        X = as_matrix(X)
        if X.shape[1] != self.n_features:
            raise InvalidInputError(
                f"invalid input: surrogate expects {self.n_features} features, got {X.shape[1]}"
            )
        if self.kind == "ridge":
            return X @ self.coef + self.intercept
        return self.tree.predict(X)

    def attributions(self) -> NDArray[np.float64]:
        """Per-feature explanation: ridge coefficients, or tree impurity importances."""
        if self.kind == "ridge":
            return self.coef
        return self.tree.importances

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "coef": None if self.coef is None else self.coef.tolist(),
            "intercept": self.intercept,
            "alpha": self.alpha,
            "tree": None if self.tree is None else self.tree.to_dict(),
            "weight_sum": self.weight_sum,
            "n_selected": self.n_selected,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LocalModel":
        return cls(
            kind=payload["kind"],
            n_features=int(payload["n_features"]),
            coef=None if payload["coef"] is None else np.asarray(payload["coef"], dtype=np.float64),
            intercept=float(payload["intercept"]),
            alpha=float(payload["alpha"]),
            tree=None if payload["tree"] is None else RegressionTree.from_dict(payload["tree"]),
            weight_sum=float(payload["weight_sum"]),
            n_selected=int(payload["n_selected"]),
        )


@dataclass
class Explanation:
    """Per-instance output shared by every explanation method."""

    instance_id: int
    method: str
    features: NDArray[np.float64]
    weights: NDArray[np.float64]
    local_model: LocalModel
    local_prediction: float
    blackbox_prediction: float
    top_ids: NDArray[np.int64]

    @property
    def coefficients(self) -> NDArray[np.float64]:
        return self.local_model.attributions()

    @property
    def intercept(self) -> float:
        return self.local_model.intercept if self.local_model.kind == "ridge" else 0.0


def top_weighted(weights: NDArray, k: int = 10) -> NDArray[np.int64]:
    """Indices of the k largest weights, largest first, ties by ascending index."""
    weights = np.asarray(weights, dtype=np.float64)
    order = np.lexsort((np.arange(weights.size), -weights))
    return order[:k]


def _check_weights(weights: NDArray, n: int) -> NDArray[np.float64]:
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != n:
        raise InvalidInputError(f"invalid input: {weights.shape[0]} weights for {n} instances")
    check_finite(weights, names=["weights"])
    if np.any(weights < 0):
        raise InvalidInputError("invalid input: weights must be nonnegative")
    if weights.sum() <= 0:
        raise DegenerateWeightsError("degenerate weights: all weights are zero")
    return weights


def fit_local(
    kind: str,
    X: NDArray,
    y: NDArray,
    weights: NDArray,
    alpha: float = DEFAULT_ALPHA,
    max_depth: int = MAX_TREE_DEPTH,
) -> LocalModel:
    X = as_matrix(X)
    weights = _check_weights(weights, X.shape[0])
    diagnostics = {"weight_sum": float(weights.sum()), "n_selected": int(np.count_nonzero(weights))}
    if kind == "ridge":
        solution = weighted_ridge_fit(X, y, weights, alpha)
        return LocalModel(
            kind=kind,
            n_features=X.shape[1],
            coef=solution.coef,
            intercept=solution.intercept,
            alpha=solution.alpha,
            **diagnostics,
        )
    if kind == "shallow_tree":
        if not 1 <= max_depth <= MAX_TREE_DEPTH:
            raise InvalidInputError(f"invalid input: tree depth must be in [1, {MAX_TREE_DEPTH}]")
        tree = RegressionTree(max_depth=max_depth, min_leaf_weight=MIN_LEAF_WEIGHT)
        tree.fit(X, y, sample_weight=weights)
        return LocalModel(kind=kind, n_features=X.shape[1], tree=tree, **diagnostics)
    raise InvalidInputError(f"unknown local model kind '{kind}'")


def fit_local_ridge(aux: AuxiliaryDataset, weights: NDArray, alpha: float = DEFAULT_ALPHA) -> LocalModel:
    return fit_local("ridge", aux.features, aux.targets, weights, alpha=alpha)


def fit_local_tree(
    aux: AuxiliaryDataset, weights: NDArray, max_depth: int = MAX_TREE_DEPTH
) -> LocalModel:
    return fit_local("shallow_tree", aux.features, aux.targets, weights, max_depth=max_depth)


@dataclass(frozen=True)
class BaselineModel:
    """Globally fitted surrogate g_b; fixed once Stage 2 is done."""

    model: LocalModel

    @property
    def kind(self) -> str:
        return self.model.kind

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        return self.model.predict(X)

    def checksum(self) -> str:
        payload = json.dumps(self.model.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def fit_global_baseline(
    aux_train: AuxiliaryDataset,
    kind: str = "ridge",
    alpha: float = DEFAULT_ALPHA,
    max_depth: int = MAX_TREE_DEPTH,
) -> BaselineModel:
    if aux_train.n_samples == 0:
        raise InvalidInputError("invalid input: empty auxiliary training set")
    uniform = np.ones(aux_train.n_samples)
    return BaselineModel(
        fit_local(kind, aux_train.features, aux_train.targets, uniform, alpha=alpha, max_depth=max_depth)
    )


def save_baseline(baseline: BaselineModel, path: Path) -> Path:
    return write_artifact(
        path, "baseline", baseline.model.to_dict(), baseline_kind=baseline.kind, checksum=baseline.checksum()
    )


def load_baseline(path: Path) -> BaselineModel:
    header, payload = read_artifact(path, "baseline")
    baseline = BaselineModel(LocalModel.from_dict(payload))
    if baseline.checksum() != header["checksum"]:
        raise ArtifactError(path, "checksum does not match its parameters")
    return baseline
