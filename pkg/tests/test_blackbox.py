from dataclasses import dataclass

import numpy as np
import pytest

from local_surrogates.blackbox import (
    BlackBoxModel,
    ForestConfig,
    MlpConfig,
    OracleModel,
    build_auxiliary,
    load_model,
    oracle_predict,
    save_model,
    train_forest,
    train_mlp,
)
from local_surrogates.data import Dataset, gen_syn, synthetic_labels
from local_surrogates.errors import ArtifactError, InvalidInputError
from local_surrogates.metrics import apr, mae
from local_surrogates.utils.artifact_store import read_artifact


@dataclass
class FixedProbabilities(BlackBoxModel):
    probabilities: np.ndarray
    kind: str = "fixed"
    task: str = "classification"
    n_features: int = 1

    def predict(self, X):
        return self.probabilities[: len(X)]


def linear_dataset(n: int, seed: int) -> Dataset:
    x = np.random.default_rng(seed).uniform(-1, 1, size=(n, 1))
    return Dataset(features=x, labels=2.0 * x[:, 0], feature_names=["x"])


def blob_dataset(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n).astype(float)
    centers = np.where(labels[:, None] > 0, 2.0, -2.0)
    features = centers + 0.5 * rng.normal(size=(n, 2))
    return Dataset(features=features, labels=labels, feature_names=["a", "b"], task="classification")


class TestOracle:
    def test_scalar_and_rows(self):
        x = np.zeros(11)
        x[[0, 1, 9]] = [1.0, 1.0, -1.0]
        assert oracle_predict("syn1", x) == pytest.approx(3.0)
        assert oracle_predict("syn1", np.vstack([x, x])).tolist() == [3.0, 3.0]

    def test_wrong_width(self):
        with pytest.raises(InvalidInputError):
            oracle_predict("syn1", np.zeros(4))
        with pytest.raises(InvalidInputError, match="expects 11 features"):
            OracleModel("syn1").predict(np.zeros((2, 3)))

    def test_auxiliary_targets_are_labels(self):
        data = gen_syn("syn1", 3, 0)
        aux = build_auxiliary(OracleModel("syn1"), data.features)
        assert aux.targets.tolist() == synthetic_labels("syn1", data.features).tolist()


class TestAuxiliary:
    def test_classification_targets_are_logits(self):
        model = FixedProbabilities(np.array([0.5, 1.0]))
        aux = build_auxiliary(model, np.zeros((2, 1)))
        assert aux.targets[0] == pytest.approx(0.0)
        assert aux.targets[1] == pytest.approx(13.8155, abs=1e-4)
        assert aux.task == "classification"

    def test_subset(self):
        aux = build_auxiliary(OracleModel("syn2"), gen_syn("syn2", 10, 0).features, role="probe")
        part = aux.subset(np.array([1, 3]))
        assert part.n_samples == 2
        assert part.role == "probe"


class TestForest:
    def test_deterministic(self):
        data = gen_syn("syn1", 200, 0)
        config = ForestConfig(n_trees=5, seed=3)
        a, b = train_forest(data, config), train_forest(data, config)
        assert np.array_equal(a.predict(data.features), b.predict(data.features))

    def test_parallel_growth_matches_serial(self):
        data = gen_syn("syn1", 200, 0)
        serial = train_forest(data, ForestConfig(n_trees=4, seed=1))
        parallel = train_forest(data, ForestConfig(n_trees=4, seed=1, jobs=2))
        assert np.array_equal(serial.predict(data.features), parallel.predict(data.features))

    def test_importances_normalized(self):
        model = train_forest(gen_syn("syn1", 200, 0), ForestConfig(n_trees=5))
        assert model.forest.importances.sum() == pytest.approx(1.0)
        assert model.forest.apply(np.zeros((3, 11))).shape == (3, 5)

    def test_save_and_load(self, tmp_path):
        data = gen_syn("syn1", 100, 0)
        model = train_forest(data, ForestConfig(n_trees=3))
        restored = load_model(save_model(model, tmp_path / "blackbox.json"))
        assert np.array_equal(restored.predict(data.features), model.predict(data.features))

    @pytest.mark.slow
    def test_beats_global_ridge_on_syn1(self):
        train, test = gen_syn("syn1", 2000, 0), gen_syn("syn1", 500, 1)
        forest = train_forest(train, ForestConfig(n_trees=100, seed=0))
        A = np.hstack([train.features, np.ones((train.n_samples, 1))])
        theta = np.linalg.lstsq(A, train.labels, rcond=None)[0]
        ridge = np.hstack([test.features, np.ones((test.n_samples, 1))]) @ theta
        assert mae(forest.predict(test.features), test.labels) < mae(ridge, test.labels)


class TestMlp:
    def test_zero_epochs_keep_initialization(self):
        data = linear_dataset(50, 0)
        a = train_mlp(data, MlpConfig(max_epochs=0, seed=2))
        b = train_mlp(data, MlpConfig(max_epochs=0, seed=2))
        assert np.array_equal(a.predict(data.features), b.predict(data.features))

    def test_widths_have_a_floor(self):
        model = train_mlp(linear_dataset(20, 0), MlpConfig(max_epochs=0))
        assert model.network.layer_sizes == [1, 4, 4, 4, 4, 1]

    def test_save_and_load(self, tmp_path):
        data = linear_dataset(50, 0)
        model = train_mlp(data, MlpConfig(max_epochs=2))
        restored = load_model(save_model(model, tmp_path / "mlp.json"))
        assert np.array_equal(restored.predict(data.features), model.predict(data.features))

    def test_oracle_round_trip_records_its_kind(self, tmp_path):
        path = save_model(OracleModel("syn1"), tmp_path / "oracle.json")
        header, _ = read_artifact(path, "blackbox")
        assert header["model_kind"] == "oracle"
        restored = load_model(path)
        assert isinstance(restored, OracleModel)
        x = gen_syn("syn1", 5, 0).features
        assert np.array_equal(restored.predict(x), synthetic_labels("syn1", x))

    def test_header_mismatch(self, tmp_path):
        path = save_model(OracleModel("syn1"), tmp_path / "oracle.json")
        path.write_text(path.read_text().replace('"n_features": 11', '"n_features": 3'))
        with pytest.raises(ArtifactError, match="declares 3 features"):
            load_model(path)

    @pytest.mark.slow
    def test_learns_a_line(self):
        model = train_mlp(linear_dataset(1000, 0), MlpConfig(seed=0))
        held_out = linear_dataset(200, 1)
        assert mae(model.predict(held_out.features), held_out.labels) < 0.1

    @pytest.mark.slow
    def test_separates_blobs(self):
        model = train_mlp(blob_dataset(1000, 0), MlpConfig(seed=0))
        held_out = blob_dataset(200, 1)
        assert apr(model.predict(held_out.features), held_out.labels) > 0.99
