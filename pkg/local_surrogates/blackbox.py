"""Black-box predictors (Stage 0) and auxiliary distillation datasets (Stage 1)."""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import NDArray

from local_surrogates.cart import RegressionTree
from local_surrogates.data import SYNTHETIC_DIM, SYNTHETIC_KINDS, Dataset, synthetic_labels
from local_surrogates.errors import ArtifactError, DivergedError, InvalidInputError
from local_surrogates.network import Adam, FeedForward
from local_surrogates.numerics import Matrix, RandomSource, as_matrix, check_finite, logit, sigmoid
from local_surrogates.utils.artifact_store import read_artifact, write_artifact

logger = logging.getLogger(__name__)

BLACKBOX_KINDS = ("oracle", "mlp", "forest")
LOGIT_CLAMP = 1e-6


def oracle_predict(kind: str, x: NDArray) -> NDArray[np.float64] | float:
    """Ground-truth piecewise-linear label of a synthetic generator; x has 11 entries (or rows of 11)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != SYNTHETIC_DIM:
        raise InvalidInputError(f"invalid input: oracle expects {SYNTHETIC_DIM} features")
    labels = synthetic_labels(kind, x)
    return float(labels) if x.ndim == 1 else labels


class BlackBoxModel:
    """Opaque predictor f*: predict() returns values (regression) or class-1 probabilities."""

    kind: str
    task: str
    n_features: int

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check(self, X: NDArray) -> Matrix:
        X = as_matrix(X)
        if X.shape[1] != self.n_features:
            raise InvalidInputError(
                f"invalid input: {self.kind} black box expects {self.n_features} features, got {X.shape[1]}"
            )
        return X


@dataclass
class OracleModel(BlackBoxModel):
    synthetic_kind: str
    kind: str = "oracle"
    task: str = "regression"
    n_features: int = SYNTHETIC_DIM

    def __post_init__(self):
        if self.synthetic_kind not in SYNTHETIC_KINDS:
            raise InvalidInputError(f"unknown synthetic kind '{self.synthetic_kind}'")

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        return synthetic_labels(self.synthetic_kind, self._check(X))

    def to_dict(self) -> dict:
        return {"synthetic_kind": self.synthetic_kind}


@dataclass
class MlpConfig:
    hidden_fractions: tuple[int, ...] = (1, 2, 4, 8)
    min_width: int = 4
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0


@dataclass
class MLPModel(BlackBoxModel):
    network: FeedForward
    task: str = "regression"
    target_mean: float = 0.0
    target_scale: float = 1.0
    kind: str = "mlp"
    n_features: int = 0

    def __post_init__(self):
        self.n_features = self.network.layer_sizes[0]

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        out = self.network.predict(self._check(X))
        if self.task == "classification":
            return sigmoid(out)
        return out * self.target_scale + self.target_mean

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
        }


def _mlp_loss(out: NDArray, y: NDArray, task: str) -> tuple[float, NDArray]:
    """Mean loss and its gradient w.r.t. the network output."""
    n = y.shape[0]
    if task == "classification":
        p = sigmoid(out)
        eps = 1e-12
        loss = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
        return float(loss), (p - y) / n
    diff = out - y
    return float(np.mean(diff * diff)), 2.0 * diff / n


def train_mlp(train: Dataset, config: MlpConfig | None = None) -> MLPModel:
    """ReLU MLP with widths (d, d/2, d/4, d/8), Adam, early stopping on the last slice of train."""
    config = config or MlpConfig()
    if train.n_samples == 0:
        raise InvalidInputError("invalid input: cannot train on an empty dataset")
    X, y = train.features, train.labels
    check_finite(X, y, names=["features", "labels"])
    rng = RandomSource(config.seed)

    d = train.n_features
    widths = [max(d // k, config.min_width) for k in config.hidden_fractions]
    network = FeedForward.initialize([d, *widths, 1], "relu", rng.child("init"), bias=0.01)

    n_valid = int(round(config.validation_fraction * train.n_samples))
    if train.n_samples - n_valid < 1:
        n_valid = 0
    n_fit = train.n_samples - n_valid
    X_fit, y_fit = X[:n_fit], y[:n_fit]
    X_val, y_val = (X[n_fit:], y[n_fit:]) if n_valid else (X_fit, y_fit)

    mean, scale = 0.0, 1.0
    if train.task == "regression":
        mean = float(y_fit.mean())
        scale = float(y_fit.std()) or 1.0
    t_fit = (y_fit - mean) / scale
    t_val = (y_val - mean) / scale

    optimizer = Adam(learning_rate=config.learning_rate)
    batches = rng.child("minibatch")
    best_loss, best_network, stale = np.inf, network.copy(), 0
    for epoch in range(config.max_epochs):
        order = batches.generator.permutation(n_fit)
        for start in range(0, n_fit, config.batch_size):
            idx = order[start:start + config.batch_size]
            out, cache = network.forward(X_fit[idx])
            loss, d_out = _mlp_loss(out, t_fit[idx], train.task)
            if not np.isfinite(loss):
                raise DivergedError(
                    f"MLP training diverged in epoch {epoch}",
                    checkpoint=MLPModel(best_network, train.task, mean, scale),
                )
            optimizer.step(network.parameters, network.backward(cache, d_out))
        val_loss, _ = _mlp_loss(network.predict(X_val), t_val, train.task)
        if not np.isfinite(val_loss):
            raise DivergedError(
                f"MLP validation loss diverged in epoch {epoch}",
                checkpoint=MLPModel(best_network, train.task, mean, scale),
            )
        if val_loss < best_loss:
            best_loss, best_network, stale = val_loss, network.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("MLP early stop after epoch %d (val loss %.5g)", epoch, best_loss)
                break
    return MLPModel(best_network, train.task, mean, scale)


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    max_features: int | None = None
    seed: int = 0
    jobs: int = 1


@dataclass
class RandomForest:
    trees: list[RegressionTree]
    bootstrap_indices: list[NDArray[np.int64]]
    max_depth: int | None
    min_leaf: int
    importances: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def apply(self, X: NDArray) -> NDArray[np.int64]:
        """Leaf ids, one column per tree."""
        return np.column_stack([tree.apply(X) for tree in self.trees])


def _default_max_features(d: int, task: str) -> int:
    if task == "classification":
        return max(1, int(np.sqrt(d)))
    return max(1, d // 3)


def fit_random_forest(
    X: NDArray, y: NDArray, task: str, config: ForestConfig | None = None
) -> RandomForest:
    """Bagged CART ensemble; bootstrap counts act as sample weights."""
    config = config or ForestConfig()
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise InvalidInputError("invalid input: cannot train a forest on an empty dataset")
    max_features = config.max_features or _default_max_features(d, task)
    root = RandomSource(config.seed)

    def grow(t: int) -> tuple[RegressionTree, NDArray]:
        rng = root.child("bootstrap", t)
        drawn = np.sort(rng.generator.integers(0, n, size=n))
        counts = np.bincount(drawn, minlength=n).astype(np.float64)
        tree = RegressionTree(
            max_depth=config.max_depth,
            min_leaf_weight=float(config.min_leaf),
            max_features=max_features,
            criterion="gini" if task == "classification" else "variance",
        )
        return tree.fit(X, y, sample_weight=counts, rng=rng), drawn

    if config.jobs > 1:
        grown = Parallel(n_jobs=config.jobs, prefer="threads")(delayed(grow)(t) for t in range(config.n_trees))
    else:
        grown = [grow(t) for t in range(config.n_trees)]
    trees = [tree for tree, _ in grown]
    importances = np.mean([tree.importances for tree in trees], axis=0)
    if importances.sum() > 0:
        importances = importances / importances.sum()
    return RandomForest(
        trees=trees,
        bootstrap_indices=[drawn for _, drawn in grown],
        max_depth=config.max_depth,
        min_leaf=config.min_leaf,
        importances=importances,
    )


@dataclass
class ForestModel(BlackBoxModel):
    forest: RandomForest
    task: str = "regression"
    n_features: int = 0
    kind: str = "forest"

    def predict(self, X: NDArray) -> NDArray[np.float64]:
        return self.forest.predict(self._check(X))

    def to_dict(self) -> dict:
        return {
            "max_depth": self.forest.max_depth,
            "min_leaf": self.forest.min_leaf,
            "importances": self.forest.importances.tolist(),
            "bootstrap_indices": [b.tolist() for b in self.forest.bootstrap_indices],
            "trees": [tree.to_dict() for tree in self.forest.trees],
        }


def train_forest(train: Dataset, config: ForestConfig | None = None) -> ForestModel:
    forest = fit_random_forest(train.features, train.labels, train.task, config)
    return ForestModel(forest=forest, task=train.task, n_features=train.n_features)


def model_from_dict(kind: str, task: str, payload: dict) -> BlackBoxModel:
    if kind == "oracle":
        return OracleModel(synthetic_kind=payload["synthetic_kind"])
    if kind == "mlp":
        return MLPModel(
            network=FeedForward.from_dict(payload["network"]),
            task=task,
            target_mean=float(payload["target_mean"]),
            target_scale=float(payload["target_scale"]),
        )
    if kind == "forest":
        trees = [RegressionTree.from_dict(t) for t in payload["trees"]]
        forest = RandomForest(
            trees=trees,
            bootstrap_indices=[np.asarray(b, dtype=np.int64) for b in payload["bootstrap_indices"]],
            max_depth=payload["max_depth"],
            min_leaf=int(payload["min_leaf"]),
            importances=np.asarray(payload["importances"], dtype=np.float64),
        )
        return ForestModel(forest=forest, task=task, n_features=trees[0].n_features)
    raise InvalidInputError(f"unknown black-box kind '{kind}'")


@dataclass
class AuxiliaryDataset:
    """Features paired with black-box outputs; classification targets are logits."""

    features: Matrix
    targets: NDArray[np.float64]
    role: str = "train"
    task: str = "regression"

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: NDArray) -> "AuxiliaryDataset":
        return replace(self, features=self.features[indices], targets=self.targets[indices])

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "task": self.task,
            "features": self.features.tolist(),
            "targets": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AuxiliaryDataset":
        return cls(
            features=np.asarray(payload["features"], dtype=np.float64),
            targets=np.asarray(payload["targets"], dtype=np.float64),
            role=payload["role"],
            task=payload["task"],
        )


def distillation_targets(model: BlackBoxModel, features: NDArray) -> NDArray[np.float64]:
    """f*(x) in the space surrogates are fitted in: values, or logits of clamped probabilities."""
    predictions = model.predict(features)
    if model.task == "classification":
        return logit(predictions, clamp=LOGIT_CLAMP)
    return np.asarray(predictions, dtype=np.float64)


def build_auxiliary(model: BlackBoxModel, features: NDArray, role: str = "train") -> AuxiliaryDataset:
    features = as_matrix(features)
    return AuxiliaryDataset(
        features=features,
        targets=distillation_targets(model, features),
        role=role,
        task=model.task,
    )


def save_model(model: BlackBoxModel, path: Path) -> Path:
    return write_artifact(
        path, "blackbox", model.to_dict(), model_kind=model.kind, task=model.task, n_features=model.n_features
    )


def load_model(path: Path) -> BlackBoxModel:
    header, payload = read_artifact(path, "blackbox")
    model = model_from_dict(header["model_kind"], header["task"], payload)
    if model.n_features != header["n_features"]:
        raise ArtifactError(path, f"declares {header['n_features']} features but holds {model.n_features}")
    return model
