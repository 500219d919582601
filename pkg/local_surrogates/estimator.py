"""Instance-wise weight estimator, Bernoulli selection sampler and the REINFORCE update (Stage 3)."""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from local_surrogates.blackbox import AuxiliaryDataset
from local_surrogates.errors import ArtifactError, DivergedError, InvalidInputError
from local_surrogates.interpretable import (
    DEFAULT_ALPHA,
    LOCAL_KINDS,
    MAX_TREE_DEPTH,
    BaselineModel,
    LocalModel,
    fit_local,
)
from local_surrogates.network import Adam, FeedForward
from local_surrogates.numerics import MinMaxScaler, RandomSource, as_matrix, sigmoid
from local_surrogates.utils.artifact_store import read_artifact, write_artifact

logger = logging.getLogger(__name__)

PROB_EPSILON = 1e-8
FIDELITY_LOSSES = ("absolute", "squared")
LAYER_READINGS = ("hidden", "total")
PENALTY_GRADIENTS = ("exact", "score")
MIN_SELECTED = 2

LocalFitter = Callable[[NDArray, NDArray, NDArray], LocalModel]


@dataclass
class TrainConfig:
    lam: float = 0.5
    learning_rate: float = 1e-3
    probe_batch_size: int = 32
    train_batch_size: int = 1024
    iterations: int = 1000
    seed: int = 0
    hidden_layers: int = 5
    hidden_units: int = 100
    layer_reading: str = "hidden"
    fidelity_loss: str = "absolute"
    penalty_gradient: str = "exact"
    local_alpha: float = DEFAULT_ALPHA
    tree_depth: int = MAX_TREE_DEPTH
    log_every: int = 100

    def validate(self) -> list[str]:
        problems = []
        if not self.lam >= 0:
            problems.append(f"lambda must be >= 0, got {self.lam}")
        if not self.learning_rate > 0:
            problems.append(f"learning rate must be positive, got {self.learning_rate}")
        for name in ("probe_batch_size", "train_batch_size", "hidden_units"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if self.layer_reading not in LAYER_READINGS:
            problems.append(f"layer_reading must be one of {LAYER_READINGS}")
        minimum_layers = 1 if self.layer_reading == "hidden" else 2
        if self.hidden_layers < minimum_layers:
            problems.append(f"hidden_layers must be >= {minimum_layers} under '{self.layer_reading}'")
        if self.fidelity_loss not in FIDELITY_LOSSES:
            problems.append(f"fidelity_loss must be one of {FIDELITY_LOSSES}")
        if self.penalty_gradient not in PENALTY_GRADIENTS:
            problems.append(f"penalty_gradient must be one of {PENALTY_GRADIENTS}")
        if self.local_alpha < 0:
            problems.append("local_alpha must be >= 0")
        if not 1 <= self.tree_depth <= MAX_TREE_DEPTH:
            problems.append(f"tree_depth must be in [1, {MAX_TREE_DEPTH}]")
        return problems


@dataclass
class WeightEstimator:
    """h_phi: (probe x, training x, training target) -> selection probability."""

    network: FeedForward
    n_features: int
    # min-max bounds of (features, target) over the auxiliary training set; None feeds raw values
    scaler: MinMaxScaler | None = None

    @classmethod
    def initialize(
        cls, n_features: int, config: TrainConfig, rng: RandomSource, scaler: MinMaxScaler | None = None
    ) -> "WeightEstimator":
        hidden = config.hidden_layers if config.layer_reading == "hidden" else config.hidden_layers - 1
        sizes = [2 * n_features + 1] + [config.hidden_units] * hidden + [1]
        estimator = cls(FeedForward.initialize(sizes, "tanh", rng), n_features, scaler)
        estimator._check_scaler()
        return estimator

    def _check_scaler(self) -> None:
        if self.scaler is not None and self.scaler.data_min.shape != (self.n_features + 1,):
            raise InvalidInputError(f"invalid input: input scaler must cover {self.n_features + 1} columns")

    def _scaled(self, values: NDArray, columns: slice) -> NDArray[np.float64]:
        if self.scaler is None:
            return values
        low, span = self.scaler.data_min[columns], self.scaler.data_range[columns]
        return np.where(span > 0, (values - low) / np.where(span > 0, span, 1.0), 0.0)

    @property
    def input_dim(self) -> int:
        return 2 * self.n_features + 1

    def inputs(self, probe_X: NDArray, X: NDArray, y: NDArray) -> NDArray[np.float64]:
        """(M, B, 2d + 1) tensor of concat(probe_x_j, x_i, y_i)."""
        probe_X = as_matrix(probe_X)
        X = as_matrix(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        d = self.n_features
        if probe_X.shape[1] != d or X.shape[1] != d or y.shape[0] != X.shape[0]:
            raise InvalidInputError(
                f"invalid input: estimator expects {d} features, got probe {probe_X.shape}, "
                f"batch {X.shape}, targets {y.shape}"
            )
        probe_X = self._scaled(probe_X, slice(0, d))
        X = self._scaled(X, slice(0, d))
        y = self._scaled(y, slice(d, d + 1))
        m, b = probe_X.shape[0], X.shape[0]
        return np.concatenate(
            [
                np.broadcast_to(probe_X[:, None, :], (m, b, d)),
                np.broadcast_to(X[None, :, :], (m, b, d)),
                np.broadcast_to(y[None, :, None], (m, b, 1)),
            ],
            axis=-1,
        )

    def forward(self, probe_X: NDArray, X: NDArray, y: NDArray):
        logits, cache = self.network.forward(self.inputs(probe_X, X, y))
        raw = sigmoid(logits)
        return np.clip(raw, PROB_EPSILON, 1.0 - PROB_EPSILON), raw, cache

    def weights(self, probe_X: NDArray, X: NDArray, y: NDArray) -> NDArray[np.float64]:
        return self.forward(probe_X, X, y)[0]

    def copy(self) -> "WeightEstimator":
        return WeightEstimator(self.network.copy(), self.n_features, self.scaler)

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "network": self.network.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "WeightEstimator":
        scaler = MinMaxScaler.from_dict(payload["scaler"]) if payload.get("scaler") else None
        estimator = cls(FeedForward.from_dict(payload["network"]), int(payload["n_features"]), scaler)
        if estimator.network.layer_sizes[0] != estimator.input_dim:
            raise InvalidInputError("invalid input: checkpoint input width does not match n_features")
        estimator._check_scaler()
        return estimator


def estimate_weights(
    estimator: WeightEstimator, probe_x: NDArray, batch: AuxiliaryDataset
) -> NDArray[np.float64]:
    probe_x = np.asarray(probe_x, dtype=np.float64)
    if probe_x.ndim != 1:
        raise InvalidInputError("invalid input: probe_x must be a single instance")
    return estimator.weights(probe_x[None, :], batch.features, batch.targets)[0]


@dataclass
class SelectionSample:
    probabilities: NDArray[np.float64]
    selection: NDArray[np.bool_]
    log_prob: NDArray[np.float64] | float
    selection_rate: NDArray[np.float64] | float


def selection_log_prob(w: NDArray, c: NDArray) -> NDArray[np.float64]:
    w = np.asarray(w, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    return np.sum(c * np.log(w) + (1.0 - c) * np.log(1.0 - w), axis=-1)


def sample_selection(w: NDArray, rng: RandomSource) -> SelectionSample:
    """Independent Bernoulli(w_i) draws; the last axis is the batch of training instances."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < PROB_EPSILON) or np.any(w > 1.0 - PROB_EPSILON):
        raise InvalidInputError(f"invalid input: probabilities must lie in [{PROB_EPSILON}, 1 - {PROB_EPSILON}]")
    c = rng.generator.random(w.shape) < w
    log_prob = selection_log_prob(w, c)
    rate = c.mean(axis=-1)
    if w.ndim == 1:
        return SelectionSample(w, c, float(log_prob), float(rate))
    return SelectionSample(w, c, log_prob, rate)


def _score_logit_grad(raw: NDArray, w: NDArray, c: NDArray) -> NDArray[np.float64]:
    """d log rho / d logit; zero where the probability clamp is active."""
    inside = (raw > PROB_EPSILON) & (raw < 1.0 - PROB_EPSILON)
    return np.where(inside, c.astype(np.float64) - w, 0.0)


def log_prob_gradient(
    estimator: WeightEstimator, probe_x: NDArray, X: NDArray, y: NDArray, selection: NDArray
) -> list[NDArray[np.float64]]:
    """Gradient of log rho_phi(probe_x, selection) w.r.t. every estimator parameter."""
    probe_x = np.asarray(probe_x, dtype=np.float64).reshape(1, -1)
    w, raw, cache = estimator.forward(probe_x, X, y)
    d_logits = _score_logit_grad(raw, w, np.asarray(selection)[None, :])
    return estimator.network.backward(cache, d_logits)


def fidelity(target: NDArray, prediction: NDArray, loss: str = "absolute") -> NDArray[np.float64]:
    diff = np.asarray(target, dtype=np.float64) - np.asarray(prediction, dtype=np.float64)
    return np.abs(diff) if loss == "absolute" else diff * diff


def default_fitter(local_kind: str, config: TrainConfig) -> LocalFitter:
    if local_kind not in LOCAL_KINDS:
        raise InvalidInputError(f"unknown local model kind '{local_kind}'")

    def fit(X: NDArray, y: NDArray, weights: NDArray) -> LocalModel:
        return fit_local(local_kind, X, y, weights, alpha=config.local_alpha, max_depth=config.tree_depth)

    return fit


@dataclass
class IterationLog:
    iteration: int
    mean_reward: float
    mean_selection_prob: float
    mean_advantage: float
    selection_rate: float
    degenerate: int


def reinforce_step(
    estimator: WeightEstimator,
    optimizer: Adam,
    probe_batch: AuxiliaryDataset,
    train_batch: AuxiliaryDataset,
    baseline: BaselineModel,
    local_kind: str,
    config: TrainConfig,
    rng: RandomSource,
    iteration: int = 0,
    local_fitter: LocalFitter | None = None,
) -> IterationLog:
    """
    One policy-gradient update of the estimator, in place.

    Every probe instance gets its own selection over the training batch and its own local
    fit; its advantage is (fidelity loss - baseline loss + lam * selection rate). With
    ``penalty_gradient="score"`` phi descends along mean_j advantage_j * grad log rho_j.
    With ``"exact"`` only the fidelity part goes through the score function, and the
    penalty's expectation lam * mean(w) is differentiated directly. Selections with fewer
    than two instances fall back to the continuous weights for the fit only.
    """
    fitter = local_fitter or default_fitter(local_kind, config)
    X, y = train_batch.features, train_batch.targets
    probe_X, probe_y = probe_batch.features, probe_batch.targets
    m = probe_X.shape[0]

    w, raw, cache = estimator.forward(probe_X, X, y)
    sample = sample_selection(w, rng)

    losses = np.empty(m)
    degenerate = 0
    for j in range(m):
        chosen = sample.selection[j]
        if np.count_nonzero(chosen) < MIN_SELECTED:
            fit_weights = w[j]
            degenerate += 1
        else:
            fit_weights = chosen.astype(np.float64)
        model = fitter(X, y, fit_weights)
        losses[j] = fidelity(probe_y[j], model.predict(probe_X[j:j + 1])[0], config.fidelity_loss)
    if degenerate:
        logger.debug("iteration %d: %d degenerate selections used continuous weights", iteration, degenerate)

    baseline_losses = fidelity(probe_y, baseline.predict(probe_X), config.fidelity_loss)
    advantage = losses - baseline_losses + config.lam * sample.selection_rate

    if config.penalty_gradient == "exact":
        scored = losses - baseline_losses
        d_logits = _score_logit_grad(raw, w, sample.selection) * (scored / m)[:, None]
        # d(lam * mean(w)) / d logit = lam * w * (1 - w) / (M * B), clamp respected
        inside = (raw > PROB_EPSILON) & (raw < 1.0 - PROB_EPSILON)
        d_logits = d_logits + np.where(inside, config.lam * w * (1.0 - w) / w.size, 0.0)
    else:
        d_logits = _score_logit_grad(raw, w, sample.selection) * (advantage / m)[:, None]
    grads = estimator.network.backward(cache, d_logits)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergedError(f"non-finite gradient at iteration {iteration}", checkpoint=estimator.copy())
    optimizer.step(estimator.network.parameters, grads)

    return IterationLog(
        iteration=iteration,
        mean_reward=float(np.mean(baseline_losses - losses)),
        mean_selection_prob=float(np.mean(w)),
        mean_advantage=float(np.mean(advantage)),
        selection_rate=float(np.mean(sample.selection_rate)),
        degenerate=degenerate,
    )


@dataclass
class LearningCurve:
    records: list[IterationLog] = field(default_factory=list)

    def rewards(self) -> NDArray[np.float64]:
        return np.array([r.mean_reward for r in self.records])

    def selection_probs(self) -> NDArray[np.float64]:
        return np.array([r.mean_selection_prob for r in self.records])

    def quartile_means(self) -> tuple[float, float]:
        """Mean reward over the first and the last quarter of iterations."""
        rewards = self.rewards()
        q = max(1, len(rewards) // 4)
        return float(rewards[:q].mean()), float(rewards[-q:].mean())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iteration": [r.iteration for r in self.records],
                "mean_reward": self.rewards(),
                "mean_selection_prob": self.selection_probs(),
                "mean_advantage": [r.mean_advantage for r in self.records],
            }
        )


def train_estimator(
    aux_train: AuxiliaryDataset,
    aux_probe: AuxiliaryDataset,
    baseline: BaselineModel,
    local_kind: str,
    config: TrainConfig,
    local_fitter: LocalFitter | None = None,
) -> tuple[WeightEstimator, LearningCurve]:
    problems = config.validate()
    if problems:
        raise InvalidInputError("invalid training config: " + "; ".join(problems))
    if aux_train.n_samples < MIN_SELECTED or aux_probe.n_samples < 1:
        raise InvalidInputError("invalid input: need >= 2 training and >= 1 probe instances")
    root = RandomSource(config.seed)
    scaler = MinMaxScaler.fit(np.column_stack([aux_train.features, aux_train.targets]))
    estimator = WeightEstimator.initialize(aux_train.n_features, config, root.child("init"), scaler)
    optimizer = Adam(learning_rate=config.learning_rate)
    batches = root.child("minibatch").generator
    sampling = root.child("sampling")
    fitter = local_fitter or default_fitter(local_kind, config)
    probe_size = min(config.probe_batch_size, aux_probe.n_samples)
    train_size = min(config.train_batch_size, aux_train.n_samples)

    curve = LearningCurve()
    for iteration in range(config.iterations):
        probe_idx = batches.choice(aux_probe.n_samples, size=probe_size, replace=False)
        train_idx = batches.choice(aux_train.n_samples, size=train_size, replace=False)
        record = reinforce_step(
            estimator,
            optimizer,
            aux_probe.subset(probe_idx),
            aux_train.subset(train_idx),
            baseline,
            local_kind,
            config,
            sampling,
            iteration=iteration,
            local_fitter=fitter,
        )
        curve.records.append(record)
        if config.log_every and (iteration + 1) % config.log_every == 0:
            recent = curve.rewards()[-config.log_every:]
            logger.info(
                "iteration %d/%d: reward %.5f, selection prob %.4f",
                iteration + 1,
                config.iterations,
                recent.mean(),
                record.mean_selection_prob,
            )
    return estimator, curve


def save_estimator(estimator: WeightEstimator, path: Path) -> Path:
    return write_artifact(
        path,
        "estimator",
        estimator.to_dict(),
        n_features=estimator.n_features,
        layer_sizes=estimator.network.layer_sizes,
    )


def load_estimator(path: Path) -> WeightEstimator:
    header, payload = read_artifact(path, "estimator")
    estimator = WeightEstimator.from_dict(payload)
    if estimator.network.layer_sizes != list(header["layer_sizes"]):
        raise ArtifactError(path, "layer shapes do not match its header")
    return estimator
