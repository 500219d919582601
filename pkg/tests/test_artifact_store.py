import json

import pytest

from local_surrogates.errors import ArtifactError
from local_surrogates.utils.artifact_store import ArtifactStore, read_artifact, write_artifact


class TestArtifactStore:
    @pytest.fixture(autouse=True)
    def fixture_store(self, tmp_path):
        self.store = ArtifactStore(tmp_path / "model")
        self.payload = {"coef": [0.1, 1 / 3], "intercept": -2.5}

    def test_save_and_load(self):
        write_artifact(self.store.path("baseline"), "baseline", self.payload, checksum="abc")
        header, payload = self.store.load("baseline", "baseline")
        assert payload == self.payload
        assert header["checksum"] == "abc"
        assert header["format"] == "local_surrogates/baseline"

    def test_missing_artifact_names_the_file(self):
        with pytest.raises(ArtifactError, match=r"estimator\.json not found"):
            self.store.load("estimator", "estimator")

    def test_wrong_kind(self):
        write_artifact(self.store.path("estimator"), "baseline", self.payload)
        with pytest.raises(ArtifactError, match="expected 'local_surrogates/estimator'"):
            self.store.load("estimator", "estimator")

    def test_unsupported_version(self):
        path = write_artifact(self.store.path("scaler"), "scaler", self.payload)
        document = json.loads(path.read_text())
        document["version"] = 99
        path.write_text(json.dumps(document))
        with pytest.raises(ArtifactError, match="unsupported version"):
            read_artifact(path, "scaler")

    def test_corrupt_file(self):
        self.store.directory.mkdir(parents=True)
        self.store.path("scaler").write_text("{not json")
        with pytest.raises(ArtifactError, match="not valid JSON"):
            self.store.load("scaler", "scaler")

    def test_non_finite_values_are_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_artifact(tmp_path / "bad.json", "scaler", {"value": float("nan")})

    def test_exists(self):
        assert not self.store.exists("auxiliary")
        write_artifact(self.store.path("auxiliary"), "auxiliary", self.payload)
        assert self.store.exists("auxiliary")
        assert not self.store.exists("scaler")
