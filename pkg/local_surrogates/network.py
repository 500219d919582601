"""Dense feed-forward networks with manual backpropagation, and the Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from local_surrogates.errors import InvalidInputError
from local_surrogates.numerics import RandomSource

ACTIVATIONS = ("relu", "tanh")


def _activate(z: NDArray, activation: str) -> NDArray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: NDArray, a: NDArray, activation: str) -> NDArray:
    if activation == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


@dataclass
class FeedForward:
    """
    A stack of affine layers with a shared hidden activation and a single linear output.

    The output head (identity, sigmoid, ...) is applied by the owner; forward() returns
    the pre-activation of the last layer so callers can backpropagate from it.
    """

    weights: list[NDArray[np.float64]]
    biases: list[NDArray[np.float64]]
    activation: str = "tanh"

    @classmethod
    def initialize(
        cls,
        layer_sizes: list[int],
        activation: str,
        rng: RandomSource,
        bias: float = 0.0,
    ) -> "FeedForward":
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)) per layer."""
        if activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation '{activation}'")
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise InvalidInputError(f"invalid layer sizes {layer_sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.generator.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.full(fan_out, bias, dtype=np.float64))
        # output layer bias starts at zero regardless
        biases[-1][:] = 0.0
        return cls(weights=weights, biases=biases, activation=activation)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def parameters(self) -> list[NDArray[np.float64]]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def forward(self, X: NDArray) -> tuple[NDArray, list]:
        """Return the output pre-activation (n,) and the cache needed by backward()."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.weights[0].shape[0]:
            raise InvalidInputError(
                f"invalid input: expected {self.weights[0].shape[0]} input columns, got {X.shape[-1]}"
            )
        cache = []
        a = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i == last:
                cache.append((a, z, None))
                a = z
            else:
                h = _activate(z, self.activation)
                cache.append((a, z, h))
                a = h
        return a[..., 0], cache

    def predict(self, X: NDArray) -> NDArray:
        return self.forward(X)[0]

    def backward(self, cache: list, d_out: NDArray) -> list[NDArray[np.float64]]:
        """Gradients, ordered as `parameters`, of sum(d_out * output)."""
        delta = np.asarray(d_out, dtype=np.float64)[..., None]
        grads: list[NDArray[np.float64]] = []
        for i in reversed(range(len(self.weights))):
            a_in, z, h = cache[i]
            if h is not None:
                delta = delta * _activation_grad(z, h, self.activation)
            flat_in = a_in.reshape(-1, a_in.shape[-1])
            flat_delta = delta.reshape(-1, delta.shape[-1])
            grads.append(flat_delta.sum(axis=0))
            grads.append(flat_in.T @ flat_delta)
            if i > 0:
                delta = delta @ self.weights[i].T
        grads.reverse()
        return grads

    def copy(self) -> "FeedForward":
        return FeedForward(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeedForward":
        weights = [np.asarray(w, dtype=np.float64) for w in payload["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidInputError("invalid input: inconsistent layer shapes in checkpoint")
        network = cls(weights=weights, biases=biases, activation=payload["activation"])
        if network.layer_sizes != list(payload["layer_sizes"]):
            raise InvalidInputError("invalid input: layer sizes do not match the header")
        return network


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    _m: list[NDArray] = field(default_factory=list, repr=False)
    _v: list[NDArray] = field(default_factory=list, repr=False)

    def step(self, params: list[NDArray], grads: list[NDArray]) -> list[NDArray]:
        """Descend along grads in place; returns the applied updates."""
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        updates = []
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = -self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
            p += update
            updates.append(update)
        return updates
