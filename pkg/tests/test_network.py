import numpy as np
import pytest

from local_surrogates.errors import InvalidInputError
from local_surrogates.network import Adam, FeedForward
from local_surrogates.numerics import RandomSource


class TestFeedForward:
    @pytest.fixture(autouse=True)
    def fixture_network(self):
        self.network = FeedForward.initialize([3, 4, 2, 1], "tanh", RandomSource(0))
        self.X = np.random.default_rng(0).normal(size=(5, 3))

    def test_layer_sizes(self):
        assert self.network.layer_sizes == [3, 4, 2, 1]
        assert len(self.network.parameters) == 6

    def test_backward_matches_finite_differences(self):
        out, cache = self.network.forward(self.X)
        d_out = np.linspace(-1.0, 1.0, out.size)
        grads = self.network.backward(cache, d_out)
        h = 1e-6
        for param, grad in zip(self.network.parameters, grads):
            for index in np.ndindex(param.shape):
                original = param[index]
                param[index] = original + h
                up = d_out @ self.network.predict(self.X)
                param[index] = original - h
                down = d_out @ self.network.predict(self.X)
                param[index] = original
                assert grad[index] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8)

    def test_copy_is_independent(self):
        clone = self.network.copy()
        clone.weights[0][0, 0] += 1.0
        assert clone.weights[0][0, 0] != self.network.weights[0][0, 0]

    def test_round_trip(self):
        restored = FeedForward.from_dict(self.network.to_dict())
        assert np.array_equal(restored.predict(self.X), self.network.predict(self.X))

    def test_wrong_width(self):
        with pytest.raises(InvalidInputError, match="input columns"):
            self.network.predict(np.zeros((2, 4)))

    def test_unknown_activation(self):
        with pytest.raises(InvalidInputError):
            FeedForward.initialize([2, 1], "gelu", RandomSource(0))


class TestAdam:
    def test_descends_a_quadratic(self):
        x = np.array([3.0, -2.0])
        optimizer = Adam(learning_rate=0.1)
        for _ in range(500):
            optimizer.step([x], [2.0 * x])
        assert np.abs(x).max() < 0.1

    def test_zero_gradient_is_a_no_op(self):
        x = np.array([1.0, 2.0])
        Adam().step([x], [np.zeros(2)])
        assert x.tolist() == [1.0, 2.0]
