"""Dense linear algebra, scaling, encoding and seeded randomness shared by every module."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from local_surrogates.errors import DegenerateWeightsError, InvalidInputError

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]

RIDGE_ALPHA_FLOOR = 1e-10

# fixed labeled offsets used to derive independent streams from one root seed
STREAM_OFFSETS = {
    "split": 1,
    "init": 2,
    "sampling": 3,
    "perturbation": 4,
    "bootstrap": 5,
    "synthetic": 6,
    "minibatch": 7,
    "probe": 8,
}


@dataclass
class RandomSource:
    """A seeded PCG64 stream. Not thread-safe: parallel work takes a child()."""

    seed: int
    algorithm: str = "PCG64"
    _generator: np.random.Generator | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer: {self.seed}")
        self.seed = int(self.seed)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.Generator(np.random.PCG64(self.seed))
        return self._generator

    def child(self, label: str, index: int = 0) -> "RandomSource":
        """Derive an independent source for a purpose; same (seed, label, index) gives the same stream."""
        try:
            offset = STREAM_OFFSETS[label]
        except KeyError:
            raise InvalidInputError(f"unknown random stream label '{label}'") from None
        sequence = np.random.SeedSequence(self.seed, spawn_key=(offset, int(index)))
        return RandomSource(int(sequence.generate_state(1, dtype=np.uint64)[0]))


def as_matrix(X: ArrayLike, name: str = "X") -> Matrix:
    array = np.asarray(X, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {array.shape}")
    return array


def check_finite(*arrays: NDArray, names: Sequence[str] | None = None) -> None:
    for i, array in enumerate(arrays):
        if not np.all(np.isfinite(array)):
            label = names[i] if names else f"argument {i}"
            raise InvalidInputError(f"invalid input: {label} contains non-finite values")


@dataclass(frozen=True)
class RidgeSolution:
    coef: NDArray[np.float64]
    intercept: float
    alpha: float


def weighted_ridge_fit(
    X: ArrayLike, y: ArrayLike, w: ArrayLike, alpha: float = 1.0
) -> RidgeSolution:
    """
    Minimize sum_i w_i (y_i - X_i b - c)^2 + alpha ||b||^2 with an unpenalized intercept c.

    The intercept is eliminated by weighted centering, then the normal equations of the
    sqrt(w)-scaled centered design are solved. With alpha == 0 and a singular normal
    matrix the solve falls back to alpha = 1e-10.

    :param X: design matrix N x d
    :param y: targets, length N
    :param w: nonnegative weights, length N, at least one positive
    :param alpha: ridge penalty strength
    :return: coefficients, intercept and the alpha actually used
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    n, d = X.shape
    if n < 1 or y.shape[0] != n or w.shape[0] != n:
        raise InvalidInputError(
            f"invalid input: shapes X={X.shape}, y={y.shape}, w={w.shape} do not agree"
        )
    check_finite(X, y, w, names=["X", "y", "w"])
    if not np.isfinite(alpha) or alpha < 0:
        raise InvalidInputError(f"invalid input: alpha must be finite and >= 0, got {alpha}")
    if np.any(w < 0):
        raise InvalidInputError("invalid input: weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateWeightsError("degenerate weights: all weights are zero")

    x_mean = w @ X / total
    y_mean = w @ y / total
    root_w = np.sqrt(w)
    Xs = (X - x_mean) * root_w[:, None]
    ys = (y - y_mean) * root_w
    gram = Xs.T @ Xs
    rhs = Xs.T @ ys

    used_alpha = float(alpha)
    if used_alpha == 0.0 and np.linalg.matrix_rank(gram) < d:
        logger.debug("singular normal matrix, flooring alpha to %g", RIDGE_ALPHA_FLOOR)
        used_alpha = RIDGE_ALPHA_FLOOR
    if used_alpha > 0:
        gram = gram + used_alpha * np.eye(d)
    coef = np.linalg.solve(gram, rhs)
    intercept = float(y_mean - x_mean @ coef)
    return RidgeSolution(coef=coef, intercept=intercept, alpha=used_alpha)


@dataclass
class MinMaxScaler:
    data_min: NDArray[np.float64]
    data_max: NDArray[np.float64]

    @classmethod
    def fit(cls, X: ArrayLike) -> "MinMaxScaler":
        X = as_matrix(X)
        if X.shape[0] == 0:
            raise InvalidInputError("invalid input: cannot fit a scaler on zero rows")
        check_finite(X, names=["X"])
        return cls(data_min=X.min(axis=0), data_max=X.max(axis=0))

    @property
    def data_range(self) -> NDArray[np.float64]:
        return self.data_max - self.data_min

    def transform(self, X: ArrayLike) -> Matrix:
        # out-of-range values are not clipped
        X = as_matrix(X)
        check_finite(X, names=["X"])
        span = self.data_range
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.data_min) / safe, 0.0)

    def inverse_transform(self, Z: ArrayLike) -> Matrix:
        Z = as_matrix(Z)
        return np.where(self.data_range > 0, Z * self.data_range + self.data_min, self.data_min)

    def to_dict(self) -> dict:
        return {"data_min": self.data_min.tolist(), "data_max": self.data_max.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "MinMaxScaler":
        return cls(
            data_min=np.asarray(payload["data_min"], dtype=np.float64),
            data_max=np.asarray(payload["data_max"], dtype=np.float64),
        )


def minmax_fit_transform(X: ArrayLike) -> tuple[MinMaxScaler, Matrix]:
    scaler = MinMaxScaler.fit(X)
    return scaler, scaler.transform(X)


def one_hot_encode(column: Sequence, vocabulary: Sequence) -> Matrix:
    """Unknown categories produce all-zero rows."""
    if len(vocabulary) == 0:
        raise InvalidInputError("invalid input: vocabulary is empty")
    if len(set(vocabulary)) != len(vocabulary):
        raise InvalidInputError("invalid input: vocabulary contains duplicates")
    position = {value: i for i, value in enumerate(vocabulary)}
    encoded = np.zeros((len(column), len(vocabulary)), dtype=np.float64)
    for row, value in enumerate(column):
        index = position.get(value)
        if index is not None:
            encoded[row, index] = 1.0
    return encoded


def logit(p: ArrayLike, clamp: float = 1e-6) -> NDArray[np.float64]:
    p = np.clip(np.asarray(p, dtype=np.float64), clamp, 1.0 - clamp)
    return np.log(p / (1.0 - p))


def sigmoid(z: ArrayLike) -> NDArray[np.float64]:
    z = np.asarray(z, dtype=np.float64)
    # exp of a nonpositive argument never overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
