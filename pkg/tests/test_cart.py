import numpy as np
import pytest

from local_surrogates.cart import LEAF, RegressionTree
from local_surrogates.errors import InvalidInputError


class TestRegressionTree:
    def test_single_threshold(self):
        X = np.arange(10.0)[:, None]
        y = (X[:, 0] >= 5).astype(float)
        tree = RegressionTree(max_depth=3).fit(X, y)
        assert tree.depth == 1
        assert tree.feature[0] == 0
        assert tree.threshold[0] == pytest.approx(4.5)
        assert tree.predict(X).tolist() == y.tolist()

    def test_constant_targets_make_one_leaf(self):
        X = np.random.default_rng(0).normal(size=(12, 3))
        tree = RegressionTree(max_depth=3).fit(X, np.full(12, 4.2))
        assert tree.n_leaves == 1
        assert tree.predict(X) == pytest.approx(np.full(12, 4.2))

    def test_unlimited_depth_memorizes(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(50, 2)), rng.normal(size=50)
        tree = RegressionTree().fit(X, y)
        assert np.mean(np.abs(tree.predict(X) - y)) == 0.0

    def test_integer_weights_match_duplicated_rows(self):
        rng = np.random.default_rng(2)
        X, y = rng.uniform(size=(20, 2)), rng.normal(size=20)
        w = np.where(np.arange(20) % 2 == 0, 1.0, 2.0)
        weighted = RegressionTree(max_depth=3).fit(X, y, sample_weight=w)
        repeats = w.astype(int)
        duplicated = RegressionTree(max_depth=3).fit(np.repeat(X, repeats, axis=0), np.repeat(y, repeats))
        grid = rng.uniform(size=(200, 2))
        np.testing.assert_allclose(weighted.predict(grid), duplicated.predict(grid), atol=1e-9)

    def test_zero_weight_rows_are_ignored(self):
        X = np.arange(6.0)[:, None]
        y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 100.0])
        tree = RegressionTree(max_depth=1).fit(X, y, sample_weight=[1, 1, 1, 1, 1, 0])
        assert tree.predict([[5.0]])[0] == pytest.approx(1.0)

    def test_max_depth(self):
        rng = np.random.default_rng(3)
        X, y = rng.normal(size=(200, 4)), rng.normal(size=200)
        tree = RegressionTree(max_depth=2).fit(X, y)
        assert tree.depth <= 2
        assert tree.importances.sum() == pytest.approx(1.0)

    def test_apply_reaches_leaves(self):
        X = np.arange(8.0)[:, None]
        tree = RegressionTree().fit(X, X[:, 0] ** 2)
        leaves = tree.apply(X)
        assert all(tree.feature[leaf] == LEAF for leaf in leaves)

    def test_round_trip_keeps_predictions(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
        tree = RegressionTree(max_depth=3).fit(X, y)
        restored = RegressionTree.from_dict(tree.to_dict())
        assert np.array_equal(restored.predict(X), tree.predict(X))

    def test_feature_subsampling_needs_rng(self):
        with pytest.raises(InvalidInputError, match="random source"):
            RegressionTree(max_features=1).fit(np.zeros((4, 3)), np.arange(4.0))

    def test_unfitted(self):
        with pytest.raises(InvalidInputError, match="not fitted"):
            RegressionTree().predict([[0.0]])
