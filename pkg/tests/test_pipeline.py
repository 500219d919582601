import numpy as np
import pytest

from local_surrogates import pipeline
from local_surrogates.baselines import LimeConfig
from local_surrogates.blackbox import ForestConfig, MlpConfig, OracleModel
from local_surrogates.controllers import ordering_summary
from local_surrogates.data import gen_syn, synthetic_labels
from local_surrogates.errors import ConfigError, StageError
from local_surrogates.estimator import TrainConfig
from local_surrogates.metrics import awd, decile_bucket_awd
from local_surrogates.network import FeedForward
from local_surrogates.numerics import MinMaxScaler
from local_surrogates.pipeline import (
    BlackBoxSpec,
    evaluate,
    explain_batch,
    explain_instance,
    explanations_frame,
    prepare_stages,
    run_pipeline,
    sweep_lambda,
)

SMALL = TrainConfig(
    hidden_layers=2, hidden_units=8, iterations=4, probe_batch_size=4, train_batch_size=32, seed=1
)
ORACLE = BlackBoxSpec(kind="oracle")


class TestStages:
    @pytest.fixture(autouse=True)
    def fixture_data(self):
        self.train = gen_syn("syn1", 80, 0)
        self.probe = gen_syn("syn1", 20, 1)

    def test_oracle_skips_stage_zero(self):
        result = run_pipeline(self.train, ORACLE, "ridge", SMALL, probe=self.probe)
        assert result.logs[0].status == "skipped"
        assert [log.stage for log in result.logs] == [0, 1, 2, 3]
        assert result.aux_train.targets.tolist() == synthetic_labels("syn1", self.train.features).tolist()
        assert len(result.curve.records) == SMALL.iterations

    def test_probe_fraction_partition(self):
        prepared = prepare_stages(self.train, ORACLE, "ridge", SMALL, probe_fraction=0.25)
        assert prepared.aux_probe.n_samples == 20
        assert prepared.aux_train.n_samples == 60

    def test_probe_fraction_zero(self):
        with pytest.raises(ConfigError, match="probe fraction"):
            run_pipeline(self.train, ORACLE, "ridge", SMALL, probe_fraction=0.0)

    def test_seeded_rerun_is_identical(self):
        first = run_pipeline(self.train, ORACLE, "ridge", SMALL, probe=self.probe)
        second = run_pipeline(self.train, ORACLE, "ridge", SMALL, probe=self.probe)
        assert first.baseline.checksum() == second.baseline.checksum()
        assert first.curve.to_frame().equals(second.curve.to_frame())
        for a, b in zip(first.estimator.network.parameters, second.estimator.network.parameters):
            assert np.array_equal(a, b)

    def test_trained_black_boxes(self):
        forest = BlackBoxSpec(kind="forest", forest=ForestConfig(n_trees=3))
        result = run_pipeline(self.train, forest, "ridge", SMALL, probe=self.probe)
        assert result.model.kind == "forest"
        assert result.logs[0].status == "done"
        mlp = BlackBoxSpec(kind="mlp", mlp=MlpConfig(max_epochs=2))
        assert run_pipeline(self.train, mlp, "shallow_tree", SMALL, probe=self.probe).model.kind == "mlp"

    def test_stage_failure_is_wrapped(self):
        with pytest.raises(StageError, match=r"Stage 0 \(black-box training\) failed"):
            run_pipeline(self.train, BlackBoxSpec(kind="boosting"), "ridge", SMALL, probe=self.probe)


class TestInference:
    @pytest.fixture(autouse=True)
    def fixture_result(self):
        self.result = run_pipeline(gen_syn("syn1", 80, 0), ORACLE, "ridge", SMALL, probe=gen_syn("syn1", 20, 1))
        self.test = gen_syn("syn1", 12, 2)

    def explain(self, x, **kwargs):
        r = self.result
        return explain_instance(x, r.estimator, r.aux_train, r.model, r.local_kind, **kwargs)

    def test_top_k_covering_everything_changes_nothing(self):
        x = self.test.features[0]
        full = self.explain(x)
        capped = self.explain(x, top_k=self.result.aux_train.n_samples)
        assert np.array_equal(full.coefficients, capped.coefficients)
        assert full.local_prediction == capped.local_prediction

    def test_top_k_restricts_the_fit(self):
        explanation = self.explain(self.test.features[0], top_k=5)
        assert explanation.local_model.n_selected == 5
        assert explanation.weights.size == self.result.aux_train.n_samples

    def test_batch_preserves_order(self):
        r = self.result
        batch = explain_batch(self.test.features, r.estimator, r.aux_train, r.model, "ridge",
                              instance_ids=range(100, 112), jobs=3)
        assert [e.instance_id for e in batch] == list(range(100, 112))
        single = self.explain(self.test.features[4])
        assert np.array_equal(batch[4].coefficients, single.coefficients)

    def test_explanations_frame(self):
        explanation = self.explain(self.test.features[0])
        frame = explanations_frame([explanation], self.test.feature_names)
        assert frame.shape == (1, 5 + 2 * self.test.n_features)
        assert frame.loc[0, "coef_X1"] == explanation.coefficients[0]
        assert frame.loc[0, "X11"] == self.test.features[0, 10]

    def test_explanations_frame_in_original_units(self):
        explanation = self.explain(self.test.features[0])
        scaler = MinMaxScaler(np.full(11, -10.0), np.full(11, 10.0))
        frame = explanations_frame([explanation], self.test.feature_names, scaler)
        assert frame.loc[0, "X11"] == pytest.approx(20.0 * self.test.features[0, 10] - 10.0)
        assert frame.loc[0, "coef_X1"] == explanation.coefficients[0]

    def test_explanation_costs_one_estimator_pass_and_one_fit(self, monkeypatch):
        r = self.result
        calls = {"forward": [], "fit": [], "blackbox": []}
        forward, fit = FeedForward.forward, pipeline.fit_local

        def counting_forward(network, inputs):
            calls["forward"].append(inputs.shape)
            return forward(network, inputs)

        def counting_fit(kind, X, y, weights, **kwargs):
            calls["fit"].append(X.shape)
            return fit(kind, X, y, weights, **kwargs)

        class CountingOracle(OracleModel):
            def predict(self, X):
                calls["blackbox"].append(np.shape(X))
                return super().predict(X)

        monkeypatch.setattr(FeedForward, "forward", counting_forward)
        monkeypatch.setattr(pipeline, "fit_local", counting_fit)
        explain_instance(self.test.features[0], r.estimator, r.aux_train, CountingOracle("syn1"), "ridge")
        n = r.aux_train.n_samples
        assert calls["forward"] == [(1, n, 23)]
        assert calls["fit"] == [(n, 11)]
        # only the explained instance itself reaches the black box, for the reported prediction
        assert calls["blackbox"] == [(1, 11)]

    def test_evaluate_every_method(self):
        evaluation = evaluate(
            self.result,
            self.test,
            lime_config=LimeConfig(n_perturbations=50),
            neighborhood_config=ForestConfig(n_trees=3, min_leaf=5),
            maple_k_grid=[1, 2, 11],
            dataset_name="syn1",
            awd_norm="l1",
        )
        assert set(evaluation.reports) == {"original", "global", "reinforce", "lime", "silo", "maple"}
        assert evaluation.reports["original"].lmae == 0.0
        reinforce = evaluation.reports["reinforce"]
        assert reinforce.awd_norm == "l1"
        assert len(reinforce.awd_deciles) == 10
        estimated = np.vstack([e.coefficients for e in evaluation.explanations["reinforce"]])
        expected = np.mean(awd(self.test.true_coefficients(), estimated, norm="l1"))
        assert reinforce.awd == pytest.approx(expected)
        assert all(len(v) == 12 for v in evaluation.explanations.values())


class TestSweep:
    def test_single_lambda_is_chosen(self):
        result = sweep_lambda([0.3], gen_syn("syn1", 60, 0), ORACLE, "ridge", SMALL, probe=gen_syn("syn1", 10, 1))
        assert len(result.entries) == 1
        assert result.chosen.lam == 0.3
        assert result.to_frame()["chosen"].tolist() == [True]

    def test_grid_in_parallel(self):
        train, probe = gen_syn("syn1", 60, 0), gen_syn("syn1", 10, 1)
        serial = sweep_lambda([0.1, 1.0], train, ORACLE, "ridge", SMALL, probe=probe)
        parallel = sweep_lambda([0.1, 1.0], train, ORACLE, "ridge", SMALL, probe=probe, jobs=2)
        assert serial.to_frame().equals(parallel.to_frame())
        assert sum(e.chosen for e in serial.entries) == 1


BENCH_METHODS = ("reinforce", "lime", "silo", "maple")


def decile_tables(kind: str, seeds: range) -> dict:
    """Per-method l1 AWD deciles over independent train/probe/test draws of one generator."""
    runs: dict[str, list] = {m: [] for m in BENCH_METHODS}
    for seed in seeds:
        train, probe, test = (gen_syn(kind, 1000, 3 * seed + offset) for offset in range(3))
        result = run_pipeline(train, ORACLE, "ridge", TrainConfig(lam=0.5, seed=seed), probe=probe)
        evaluation = evaluate(result, test, methods=BENCH_METHODS, awd_norm="l1", seed=seed)
        for method in BENCH_METHODS:
            estimated = np.vstack([e.coefficients for e in evaluation.explanations[method]])
            runs[method].append((test.boundary_distance(), awd(test.true_coefficients(), estimated, norm="l1")))
    return {m: decile_bucket_awd(r, method=m) for m, r in runs.items()}


@pytest.mark.slow
class TestEndToEnd:
    @pytest.mark.parametrize("kind", ["syn1", "syn2", "syn3"])
    def test_reinforce_beats_the_global_baseline(self, kind):
        config = TrainConfig(lam=0.5, iterations=1000, seed=0)
        result = run_pipeline(gen_syn(kind, 1000, 0), ORACLE, "ridge", config, probe=gen_syn(kind, 1000, 1))
        first, last = result.curve.quartile_means()
        assert last > first
        assert last > 0

    def test_larger_lambda_selects_fewer_instances(self):
        train, probe = gen_syn("syn1", 1000, 0), gen_syn("syn1", 1000, 1)
        low = run_pipeline(train, ORACLE, "ridge", TrainConfig(lam=0.01, iterations=300), probe=probe)
        high = run_pipeline(train, ORACLE, "ridge", TrainConfig(lam=5.0, iterations=300), probe=probe)
        assert high.curve.selection_probs()[-50:].mean() < low.curve.selection_probs()[-50:].mean()

    def test_recovers_left_regime_near_the_boundary_better_than_silo(self):
        train, probe = gen_syn("syn1", 1000, 0), gen_syn("syn1", 1000, 1)
        result = run_pipeline(train, ORACLE, "ridge", TrainConfig(lam=0.5, iterations=1000), probe=probe)
        test = gen_syn("syn1", 1, 2)
        test.features[0, 9] = -2.0
        evaluation = evaluate(result, test, methods=("reinforce", "silo"))
        truth = test.true_coefficients()[0]
        ours = awd(truth, evaluation.explanations["reinforce"][0].coefficients)
        silo = awd(truth, evaluation.explanations["silo"][0].coefficients)
        assert ours < silo

    @pytest.mark.parametrize("kind", ["syn1", "syn2", "syn3"])
    def test_reinforce_recovers_coefficients_better_than_forest_neighborhoods(self, kind):
        summary = ordering_summary(decile_tables(kind, range(10)))
        assert summary["reinforce_below_silo"]["passed"], summary
        assert summary["reinforce_below_maple"]["passed"], summary
        assert summary["lime_above_floor"]["passed"], summary

    def test_syn2_lambda_sweep(self):
        grid = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0]
        result = sweep_lambda(grid, gen_syn("syn2", 1000, 0), ORACLE, "ridge", TrainConfig(iterations=1000),
                              probe=gen_syn("syn2", 1000, 1), jobs=4)
        frame = result.to_frame()
        probs = frame["mean_selection_prob"].to_numpy()
        smoothed = (probs[:-1] + probs[1:]) / 2
        assert np.all(np.diff(smoothed) <= 0), probs
        best = int(frame["validation_lmae"].to_numpy().argmin())
        assert 0 < best < len(grid) - 1
        assert 0.125 <= result.chosen.lam <= 2.0
