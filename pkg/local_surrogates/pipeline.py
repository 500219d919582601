"""Stages 0-3 end to end, interpretable inference (Stage 4), lambda sweeps and test-set evaluation."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import NDArray

from local_surrogates.baselines import ForestNeighborhood, LimeConfig, lime_explain, train_neighborhood_forest
from local_surrogates.blackbox import (
    AuxiliaryDataset,
    BlackBoxModel,
    ForestConfig,
    MlpConfig,
    OracleModel,
    build_auxiliary,
    distillation_targets,
    train_forest,
    train_mlp,
)
from local_surrogates.data import Dataset
from local_surrogates.errors import ConfigError, InvalidInputError, LocalSurrogatesError, StageError
from local_surrogates.estimator import (
    LearningCurve,
    TrainConfig,
    WeightEstimator,
    estimate_weights,
    train_estimator,
)
from local_surrogates.interpretable import (
    DEFAULT_ALPHA,
    MAX_TREE_DEPTH,
    BaselineModel,
    Explanation,
    fit_global_baseline,
    fit_local,
    top_weighted,
)
from local_surrogates.metrics import MetricsReport, apr, evaluate_explanations, mae, r2_score
from local_surrogates.numerics import MinMaxScaler, RandomSource

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "BlackBoxSpec",
    "Evaluation",
    "Explanation",
    "LambdaSweepResult",
    "PipelineResult",
    "evaluate",
    "explain_batch",
    "explain_instance",
    "explanations_frame",
    "run_pipeline",
    "sweep_lambda",
]

METHODS = ("original", "global", "reinforce", "lime", "silo", "maple")
DEFAULT_PROBE_FRACTION = 0.1
DEFAULT_LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0)

STAGE_NAMES = {
    0: "black-box training",
    1: "auxiliary dataset construction",
    2: "interpretable baseline training",
    3: "instance-wise weight estimator training",
}


@dataclass
class BlackBoxSpec:
    kind: str = "mlp"
    mlp: MlpConfig = field(default_factory=MlpConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    pretrained: BlackBoxModel | None = None


@dataclass
class StageLog:
    stage: int
    name: str
    status: str
    detail: str = ""


@dataclass
class PipelineResult:
    model: BlackBoxModel
    baseline: BaselineModel
    aux_train: AuxiliaryDataset
    aux_probe: AuxiliaryDataset
    local_kind: str
    config: TrainConfig
    estimator: WeightEstimator | None = None
    curve: LearningCurve | None = None
    logs: list[StageLog] = field(default_factory=list)


class _Stage:
    """Runs one numbered stage, logging it and wrapping failures in StageError."""

    def __init__(self, number: int, logs: list[StageLog]):
        self.number = number
        self.name = STAGE_NAMES[number]
        self.logs = logs

    def __enter__(self):
        logger.info("Stage %d: %s", self.number, self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            self.logs.append(StageLog(self.number, self.name, "done"))
            return False
        if isinstance(exc, LocalSurrogatesError | np.linalg.LinAlgError) and not isinstance(exc, StageError):
            self.logs.append(StageLog(self.number, self.name, "failed", str(exc)))
            raise StageError(self.number, self.name, exc) from exc
        return False


def _probe_partition(train: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < fraction < 1:
        raise ConfigError([f"probe fraction must be in (0, 1) when no probe set is given, got {fraction}"])
    n_probe = max(1, int(round(fraction * train.n_samples)))
    if train.n_samples - n_probe < 2:
        raise InvalidInputError(f"invalid input: {train.n_samples} training rows leave too few after the probe split")
    order = RandomSource(seed).child("split", 2).generator.permutation(train.n_samples)
    return train.subset(np.sort(order[n_probe:])), train.subset(np.sort(order[:n_probe]))


def prepare_stages(
    train: Dataset,
    blackbox_spec: BlackBoxSpec,
    local_kind: str,
    config: TrainConfig,
    probe: Dataset | None = None,
    probe_fraction: float = DEFAULT_PROBE_FRACTION,
) -> PipelineResult:
    """Stages 0-2: black box, auxiliary datasets and the frozen global baseline."""
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    if probe is None:
        train, probe = _probe_partition(train, probe_fraction, config.seed)
    logs: list[StageLog] = []

    if blackbox_spec.pretrained is not None or blackbox_spec.kind == "oracle":
        model = blackbox_spec.pretrained
        if model is None:
            if train.synthetic_kind is None:
                raise ConfigError(["the oracle black box needs a synthetic dataset"])
            model = OracleModel(train.synthetic_kind)
        logs.append(StageLog(0, STAGE_NAMES[0], "skipped", f"using {model.kind} model"))
        logger.info("Stage 0 skipped: using %s model", model.kind)
    else:
        with _Stage(0, logs):
            if blackbox_spec.kind == "mlp":
                model = train_mlp(train, blackbox_spec.mlp)
            elif blackbox_spec.kind == "forest":
                model = train_forest(train, blackbox_spec.forest)
            else:
                raise InvalidInputError(f"unknown black-box kind '{blackbox_spec.kind}'")

    with _Stage(1, logs):
        aux_train = build_auxiliary(model, train.features, "train")
        aux_probe = build_auxiliary(model, probe.features, "probe")
    with _Stage(2, logs):
        baseline = fit_global_baseline(
            aux_train, local_kind, alpha=config.local_alpha, max_depth=config.tree_depth
        )
    return PipelineResult(
        model=model,
        baseline=baseline,
        aux_train=aux_train,
        aux_probe=aux_probe,
        local_kind=local_kind,
        config=config,
        logs=logs,
    )


def train_stage3(prepared: PipelineResult, config: TrainConfig | None = None) -> PipelineResult:
    config = config or prepared.config
    logs = list(prepared.logs)
    checksum = prepared.baseline.checksum()
    with _Stage(3, logs):
        estimator, curve = train_estimator(
            prepared.aux_train, prepared.aux_probe, prepared.baseline, prepared.local_kind, config
        )
    if prepared.baseline.checksum() != checksum:
        raise StageError(3, STAGE_NAMES[3], RuntimeError("global baseline changed during training"))
    return replace(prepared, estimator=estimator, curve=curve, config=config, logs=logs)


def run_pipeline(
    train: Dataset,
    blackbox_spec: BlackBoxSpec,
    local_kind: str,
    config: TrainConfig,
    probe: Dataset | None = None,
    probe_fraction: float = DEFAULT_PROBE_FRACTION,
) -> PipelineResult:
    """
    Stages 0-3 in order. Stage 0 is skipped for a pretrained or oracle black box; without
    an explicit probe set, probe_fraction of train is split off as the probe set.
    """
    prepared = prepare_stages(train, blackbox_spec, local_kind, config, probe, probe_fraction)
    return train_stage3(prepared)


def explain_instance(
    x_t: NDArray,
    estimator: WeightEstimator,
    aux_train: AuxiliaryDataset,
    model: BlackBoxModel,
    local_kind: str,
    alpha: float = DEFAULT_ALPHA,
    tree_depth: int = MAX_TREE_DEPTH,
    top_k: int | None = None,
    instance_id: int = 0,
) -> Explanation:
    """Stage 4: fit the local surrogate with the estimator's probabilities as weights, no sampling."""
    x_t = np.asarray(x_t, dtype=np.float64).ravel()
    weights = estimate_weights(estimator, x_t, aux_train)
    fit_weights = weights
    if top_k is not None and top_k < weights.size:
        if top_k < 1:
            raise InvalidInputError(f"invalid input: top_k must be >= 1, got {top_k}")
        keep = top_weighted(weights, top_k)
        fit_weights = np.zeros_like(weights)
        fit_weights[keep] = weights[keep]
    local = fit_local(local_kind, aux_train.features, aux_train.targets, fit_weights, alpha=alpha, max_depth=tree_depth)
    return Explanation(
        instance_id=instance_id,
        method="reinforce",
        features=x_t,
        weights=weights,
        local_model=local,
        local_prediction=float(local.predict(x_t[None, :])[0]),
        blackbox_prediction=float(distillation_targets(model, x_t[None, :])[0]),
        top_ids=top_weighted(weights),
    )


def _map(fn, items: Sequence, jobs: int) -> list:
    if jobs > 1:
        return Parallel(n_jobs=jobs, prefer="threads")(delayed(fn)(item) for item in items)
    return [fn(item) for item in items]


def explain_batch(
    X_t: NDArray,
    estimator: WeightEstimator,
    aux_train: AuxiliaryDataset,
    model: BlackBoxModel,
    local_kind: str,
    alpha: float = DEFAULT_ALPHA,
    tree_depth: int = MAX_TREE_DEPTH,
    top_k: int | None = None,
    instance_ids: Sequence[int] | None = None,
    jobs: int = 1,
) -> list[Explanation]:
    X_t = np.atleast_2d(np.asarray(X_t, dtype=np.float64))
    ids = list(range(X_t.shape[0])) if instance_ids is None else list(instance_ids)

    def one(i: int) -> Explanation:
        return explain_instance(
            X_t[i], estimator, aux_train, model, local_kind, alpha, tree_depth, top_k, instance_id=int(ids[i])
        )

    return _map(one, range(X_t.shape[0]), jobs)


@dataclass
class SweepEntry:
    lam: float
    validation_lmae: float
    mean_selection_prob: float
    chosen: bool = False


@dataclass
class LambdaSweepResult:
    entries: list[SweepEntry]
    curves: dict[float, LearningCurve] = field(default_factory=dict)

    @property
    def chosen(self) -> SweepEntry:
        return next(e for e in self.entries if e.chosen)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "lambda": [e.lam for e in self.entries],
                "validation_lmae": [e.validation_lmae for e in self.entries],
                "mean_selection_prob": [e.mean_selection_prob for e in self.entries],
                "chosen": [e.chosen for e in self.entries],
            }
        )


def sweep_lambda(
    lambdas: Sequence[float],
    train: Dataset,
    blackbox_spec: BlackBoxSpec,
    local_kind: str,
    config: TrainConfig,
    probe: Dataset | None = None,
    probe_fraction: float = DEFAULT_PROBE_FRACTION,
    jobs: int = 1,
) -> LambdaSweepResult:
    """
    One estimator per lambda over a shared black box and baseline. Validation fidelity is
    the LMAE of Stage 4 explanations of the probe set; the first minimum is chosen.
    """
    if len(lambdas) == 0:
        raise InvalidInputError("invalid input: the lambda grid is empty")
    prepared = prepare_stages(train, blackbox_spec, local_kind, config, probe, probe_fraction)
    aux_probe = prepared.aux_probe

    def one(lam: float) -> tuple[SweepEntry, LearningCurve]:
        trained = train_stage3(prepared, replace(config, lam=float(lam)))
        explanations = explain_batch(
            aux_probe.features, trained.estimator, prepared.aux_train, prepared.model, local_kind,
            alpha=config.local_alpha, tree_depth=config.tree_depth,
        )
        local = np.array([e.local_prediction for e in explanations])
        entry = SweepEntry(
            lam=float(lam),
            validation_lmae=float(np.mean(np.abs(local - aux_probe.targets))),
            mean_selection_prob=float(np.mean([e.weights.mean() for e in explanations])),
        )
        logger.info("lambda %g: validation LMAE %.5f, selection prob %.4f",
                    lam, entry.validation_lmae, entry.mean_selection_prob)
        return entry, trained.curve

    results = _map(one, list(lambdas), jobs)
    entries = [entry for entry, _ in results]
    best = int(np.argmin([e.validation_lmae for e in entries]))
    entries[best].chosen = True
    return LambdaSweepResult(entries, {entry.lam: curve for entry, curve in results})


def explanations_frame(
    explanations: Sequence[Explanation], feature_names: Sequence[str], scaler: MinMaxScaler | None = None
) -> pd.DataFrame:
    """
    One row per explanation: method, id, both predictions, intercept, coefficients and the
    instance's features. With a scaler the features are written back in their original units.
    """
    rows = []
    for e in explanations:
        features = e.features if scaler is None else scaler.inverse_transform(e.features[None, :])[0]
        row = {
            "method": e.method,
            "instance_id": e.instance_id,
            "local_prediction": e.local_prediction,
            "blackbox_prediction": e.blackbox_prediction,
            "intercept": e.intercept,
        }
        row.update({f"coef_{name}": float(c) for name, c in zip(feature_names, e.coefficients)})
        row.update({name: float(v) for name, v in zip(feature_names, features)})
        rows.append(row)
    return pd.DataFrame(rows)


@dataclass
class Evaluation:
    reports: dict[str, MetricsReport]
    explanations: dict[str, list[Explanation]]


def _original_report(result: PipelineResult, test: Dataset, dataset_name: str, seed: int) -> MetricsReport:
    predictions = result.model.predict(test.features)
    targets = distillation_targets(result.model, test.features)
    report = MetricsReport(
        method="original",
        dataset=dataset_name,
        blackbox_kind=result.model.kind,
        local_kind="",
        task=test.task,
        n_instances=test.n_samples,
        lmae=0.0,
        r2=r2_score(targets, targets) if np.ptp(targets) > 0 else None,
        seed=seed,
    )
    if test.task == "classification":
        report.apr = apr(predictions, test.labels)
    else:
        report.mae = mae(predictions, test.labels)
    return report


def evaluate(
    result: PipelineResult,
    test: Dataset,
    methods: Sequence[str] = METHODS,
    lime_config: LimeConfig | None = None,
    neighborhood_config: ForestConfig | None = None,
    maple_k_grid: list[int] | None = None,
    awd_norm: str = "mean_abs",
    top_k: int | None = None,
    dataset_name: str = "",
    seed: int = 0,
    jobs: int = 1,
) -> Evaluation:
    """Explain every test row with each method and score the explanations on the same split."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InvalidInputError(f"unknown methods {unknown}, expected a subset of {METHODS}")
    config = result.config
    kind = result.local_kind
    fit = {"alpha": config.local_alpha, "tree_depth": config.tree_depth}
    X = test.features
    ids = [int(i) for i in test.row_ids]

    explanations: dict[str, list[Explanation]] = {}
    if "global" in methods:
        baseline = result.baseline.model
        targets = distillation_targets(result.model, X)
        explanations["global"] = [
            Explanation(
                instance_id=ids[i],
                method="global",
                features=X[i],
                weights=np.ones(result.aux_train.n_samples),
                local_model=baseline,
                local_prediction=float(baseline.predict(X[i:i + 1])[0]),
                blackbox_prediction=float(targets[i]),
                top_ids=np.arange(0),
            )
            for i in range(test.n_samples)
        ]
    if "reinforce" in methods:
        if result.estimator is None:
            raise InvalidInputError("invalid input: the pipeline result has no trained estimator")
        explanations["reinforce"] = explain_batch(
            X, result.estimator, result.aux_train, result.model, kind,
            top_k=top_k, instance_ids=ids, jobs=jobs, **fit,
        )
    if "lime" in methods:
        lime_config = lime_config or LimeConfig(local_kind=kind, alpha=config.local_alpha, tree_depth=config.tree_depth)
        scaler = MinMaxScaler.fit(result.aux_train.features)
        explanations["lime"] = _map(
            lambda i: lime_explain(X[i], result.model, lime_config, scaler, instance_id=ids[i]),
            range(test.n_samples),
            jobs,
        )
    if "silo" in methods or "maple" in methods:
        neighborhood = ForestNeighborhood(
            train_neighborhood_forest(result.aux_train, neighborhood_config), result.aux_train, result.aux_probe
        )
        if "silo" in methods:
            explanations["silo"] = _map(
                lambda i: neighborhood.silo(X[i], kind, model=result.model, instance_id=ids[i], **fit),
                range(test.n_samples),
                jobs,
            )
        if "maple" in methods:
            explanations["maple"] = _map(
                lambda i: neighborhood.maple(
                    X[i], kind, model=result.model, instance_id=ids[i], k_grid=maple_k_grid, **fit
                ),
                range(test.n_samples),
                jobs,
            )

    true_coef = distances = None
    if test.synthetic_kind is not None:
        true_coef = test.true_coefficients()
        distances = test.boundary_distance()
    reports = {}
    for method in methods:
        if method == "original":
            reports[method] = _original_report(result, test, dataset_name, seed)
            continue
        reports[method] = evaluate_explanations(
            method,
            explanations[method],
            test.labels,
            test.task,
            dataset=dataset_name,
            blackbox_kind=result.model.kind,
            local_kind=kind,
            seed=seed,
            true_coefficients=true_coef,
            distances=distances,
            awd_norm=awd_norm,
        )
    return Evaluation(reports, explanations)
