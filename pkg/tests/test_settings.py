from pathlib import Path

import pytest

from local_surrogates.errors import ConfigError
from local_surrogates.settings import (
    EXAMPLE_PATH,
    OUTPUT_ENV,
    ExperimentConfig,
    get_output_root,
    load_config,
)


class TestSettings:
    def test_defaults_are_valid(self):
        config = load_config()
        assert config == ExperimentConfig()
        assert config.estimator.lam == 0.5
        assert config.blackbox.max_depth is None

    def test_example_file(self):
        config = load_config(EXAMPLE_PATH)
        assert config.experiment.awd_norm == "l1"
        assert config.experiment.lambdas == (0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0)
        assert config.experiment.methods[-1] == "maple"
        assert config.baselines.lime_kernel_width is None

    def test_overrides_win_over_the_file(self):
        config = load_config(EXAMPLE_PATH, [("estimator", "lam", "2.5"), ("data", "source", "syn3")])
        assert config.estimator.lam == 2.5
        assert config.data.source == "syn3"

    def test_round_trip(self, tmp_path):
        config = load_config(overrides=[("blackbox", "max_depth", "4"), ("experiment", "methods", "lime, silo")])
        path = tmp_path / "config.ini"
        path.write_text(config.to_ini())
        assert load_config(path) == config

    def test_every_problem_is_reported(self):
        with pytest.raises(ConfigError) as info:
            load_config(overrides=[
                ("estimator", "lam", "-1"),
                ("experiment", "local_kind", "spline"),
                ("nowhere", "x", "1"),
                ("data", "n_train", "many"),
                ("data", "bogus", "1"),
            ])
        problems = "\n".join(info.value.problems)
        assert len(info.value.problems) == 5
        assert "lambda must be >= 0" in problems
        assert "local_kind" in problems
        assert "unknown section [nowhere]" in problems
        assert "n_train" in problems
        assert "unknown option 'bogus'" in problems

    def test_oracle_needs_synthetic_data(self):
        with pytest.raises(ConfigError, match="oracle"):
            load_config(overrides=[("data", "source", "csv"), ("data", "csv_path", "a.csv"),
                                   ("data", "schema_path", "a.ini")])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="init-config"):
            load_config(tmp_path / "absent.ini")

    def test_output_root_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        assert get_output_root() == tmp_path
        assert ExperimentConfig().output_dir() == tmp_path / "experiment"

    def test_explicit_output_dir(self):
        config = load_config(overrides=[("experiment", "output_dir", "runs/a")])
        assert config.output_dir() == Path("runs/a")

    @pytest.mark.parametrize("perturbations, rejected", [(12, True), (13, False)])
    def test_lime_needs_features_plus_two_perturbations(self, perturbations, rejected):
        overrides = [("baselines", "lime_perturbations", str(perturbations))]
        if rejected:
            with pytest.raises(ConfigError, match="lime_perturbations must be >= 13"):
                load_config(overrides=overrides)
        else:
            assert load_config(overrides=overrides).baselines.lime_perturbations == 13

    def test_small_lime_budget_is_fine_without_lime(self):
        config = load_config(overrides=[("baselines", "lime_perturbations", "5"),
                                        ("experiment", "methods", "reinforce, silo")])
        assert config.baselines.lime_perturbations == 5

    def test_estimator_seed_follows_the_experiment_seed(self):
        with pytest.raises(ConfigError, match=r"\[estimator\] seed cannot be set"):
            load_config(overrides=[("estimator", "seed", "7")])
        assert "seed" not in load_config().to_parser()["estimator"]

    def test_penalty_gradient_choices(self):
        assert load_config().estimator.penalty_gradient == "exact"
        assert load_config(overrides=[("estimator", "penalty_gradient", "score")]).estimator.penalty_gradient == "score"
        with pytest.raises(ConfigError, match="penalty_gradient must be one of"):
            load_config(overrides=[("estimator", "penalty_gradient", "relaxed")])
