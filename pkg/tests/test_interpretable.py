import json

import numpy as np
import pytest

from local_surrogates.blackbox import AuxiliaryDataset, OracleModel, build_auxiliary
from local_surrogates.data import gen_syn
from local_surrogates.errors import ArtifactError, DegenerateWeightsError, InvalidInputError
from local_surrogates.interpretable import (
    BaselineModel,
    fit_global_baseline,
    fit_local,
    fit_local_ridge,
    fit_local_tree,
    load_baseline,
    save_baseline,
    top_weighted,
)
from local_surrogates.metrics import awd, lmae
from local_surrogates.utils.artifact_store import read_artifact


class TestLocalRidge:
    def test_single_weighted_point_is_interpolated(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(6, 3)), rng.normal(size=6)
        weights = np.zeros(6)
        weights[2] = 1.0
        local = fit_local("ridge", X, y, weights, alpha=1e-10)
        assert local.predict(X[2:3])[0] == pytest.approx(y[2], abs=1e-6)
        assert local.n_selected == 1

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(30, 4)), rng.normal(size=30)
        half = fit_local("ridge", X, y, np.full(30, 0.5), alpha=0)
        one = fit_local("ridge", X, y, np.ones(30), alpha=0)
        np.testing.assert_allclose(half.coef, one.coef, atol=1e-10)

    def test_recovers_left_regime_of_syn1(self):
        data = gen_syn("syn1", 2000, 0)
        left = data.features[data.features[:, 9] < 0][:500]
        aux = build_auxiliary(OracleModel("syn1"), left)
        local = fit_local_ridge(aux, np.ones(aux.n_samples))
        truth = np.array([1.0, 2.0] + [0.0] * 9)
        assert awd(truth, local.coef) < 0.05

    def test_rejects_bad_weights(self):
        X, y = np.zeros((3, 1)), np.zeros(3)
        with pytest.raises(DegenerateWeightsError):
            fit_local("ridge", X, y, np.zeros(3))
        with pytest.raises(InvalidInputError, match="2 weights for 3"):
            fit_local("ridge", X, y, np.ones(2))
        with pytest.raises(InvalidInputError, match="unknown local model"):
            fit_local("spline", X, y, np.ones(3))


class TestLocalTree:
    def test_single_split(self):
        X = np.arange(10.0)[:, None]
        aux = AuxiliaryDataset(X, np.where(X[:, 0] < 5, -1.0, 2.0))
        local = fit_local_tree(aux, np.ones(10))
        assert local.tree.depth == 1
        assert local.predict([[1.0], [8.0]]).tolist() == [-1.0, 2.0]

    def test_depth_is_capped(self):
        with pytest.raises(InvalidInputError, match="depth"):
            fit_local("shallow_tree", np.zeros((3, 1)), np.zeros(3), np.ones(3), max_depth=4)

    def test_attributions_are_importances(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 3))
        local = fit_local("shallow_tree", X, 5 * X[:, 1], np.ones(100))
        assert int(np.argmax(local.attributions())) == 1


class TestTopWeighted:
    def test_ties_break_by_index(self):
        assert top_weighted(np.array([0.5, 0.9, 0.9, 0.1]), k=3).tolist() == [1, 2, 0]

    def test_short_input(self):
        assert top_weighted(np.array([0.2, 0.4]), k=10).tolist() == [1, 0]


class TestBaseline:
    @pytest.fixture(autouse=True)
    def fixture_aux(self):
        self.aux = build_auxiliary(OracleModel("syn1"), gen_syn("syn1", 300, 0).features)

    def test_linear_targets_are_fitted_exactly(self):
        X = np.random.default_rng(3).normal(size=(50, 2))
        aux = AuxiliaryDataset(X, X @ np.array([1.5, -2.0]) + 0.5)
        baseline = fit_global_baseline(aux, alpha=0.0)
        assert lmae(baseline.predict(X), aux.targets) < 1e-6

    def test_piecewise_targets_are_not_linear(self):
        baseline = fit_global_baseline(self.aux)
        assert lmae(baseline.predict(self.aux.features), self.aux.targets) > 0.1

    def test_checksum_is_stable(self):
        first = fit_global_baseline(self.aux)
        second = fit_global_baseline(self.aux)
        assert first.checksum() == second.checksum()
        assert isinstance(first, BaselineModel)

    def test_save_and_load(self, tmp_path):
        baseline = fit_global_baseline(self.aux, kind="shallow_tree")
        restored = load_baseline(save_baseline(baseline, tmp_path / "baseline.json"))
        assert restored.checksum() == baseline.checksum()
        assert np.array_equal(restored.predict(self.aux.features), baseline.predict(self.aux.features))
        header, _ = read_artifact(tmp_path / "baseline.json", "baseline")
        assert header["baseline_kind"] == "shallow_tree"

    def test_tampered_artifact(self, tmp_path):
        path = save_baseline(fit_global_baseline(self.aux), tmp_path / "baseline.json")
        document = json.loads(path.read_text())
        document["payload"]["intercept"] += 1.0
        path.write_text(json.dumps(document))
        with pytest.raises(ArtifactError, match="checksum"):
            load_baseline(path)
