import configparser
import logging
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from local_surrogates.baselines import LimeConfig
from local_surrogates.blackbox import (
    AuxiliaryDataset,
    BlackBoxModel,
    ForestConfig,
    MlpConfig,
    load_model,
    save_model,
)
from local_surrogates.data import (
    Dataset,
    SplitSpec,
    fit_scaler,
    gen_syn,
    read_schema,
    read_table,
    split_indices,
    subsample_indices,
)
from local_surrogates.errors import ArtifactError, ConfigError, LoadError
from local_surrogates.estimator import TrainConfig, WeightEstimator, load_estimator, save_estimator
from local_surrogates.interpretable import BaselineModel, load_baseline, save_baseline
from local_surrogates.metrics import awd, decile_bucket_awd
from local_surrogates.numerics import MinMaxScaler
from local_surrogates.pipeline import (
    BlackBoxSpec,
    PipelineResult,
    evaluate as evaluate_pipeline,
    explain_batch,
    explanations_frame,
    run_pipeline,
    sweep_lambda,
)
from local_surrogates.settings import EXAMPLE_PATH, ExperimentConfig, load_config
from local_surrogates.utils.artifact_store import ArtifactStore, write_artifact
from local_surrogates.utils.run_output import CONFIG_FILE, RunOutput

logger = logging.getLogger(__name__)

LIME_AWD_FLOOR = 1.6
COMPARED_TO = ("silo", "maple")


@dataclass
class Splits:
    train: Dataset
    probe: Dataset | None
    test: Dataset
    scaler: MinMaxScaler | None
    name: str


def _resolve(args) -> ExperimentConfig:
    return load_config(getattr(args, "config", None), getattr(args, "overrides", None))


def load_splits(config: ExperimentConfig, seed: int) -> Splits:
    """Train/probe/test datasets for one run; scaler and vocabularies see the train split only."""
    d = config.data
    if d.synthetic:
        total = d.n_train + d.n_probe + d.n_test
        data = gen_syn(d.source, total, seed)
        train = data.subset(np.arange(d.n_train))
        probe = data.subset(np.arange(d.n_train, d.n_train + d.n_probe)) if d.n_probe else None
        test = data.subset(np.arange(d.n_train + d.n_probe, total))
        name = d.source
    else:
        table = read_table(Path(d.csv_path), read_schema(Path(d.schema_path)))
        rows = subsample_indices(table.n_rows, d.subsample or table.n_rows, seed)
        spec = SplitSpec(d.train_fraction, d.probe_split, d.test_fraction, seed)
        train_idx, probe_idx, test_idx = (rows[i] for i in split_indices(rows.size, spec))
        data = table.to_dataset(vocabulary_rows=train_idx)
        train, probe, test = data.subset(train_idx), data.subset(probe_idx), data.subset(test_idx)
        name = Path(d.csv_path).stem
    scaler = None
    if d.scaled():
        scaler = fit_scaler(train)
        train, test = train.scaled(scaler), test.scaled(scaler)
        probe = probe.scaled(scaler) if probe is not None else None
    return Splits(train, probe, test, scaler, name)


def blackbox_spec(config: ExperimentConfig, seed: int) -> BlackBoxSpec:
    b = config.blackbox
    return BlackBoxSpec(
        kind=b.kind,
        mlp=MlpConfig(
            learning_rate=b.mlp_learning_rate,
            batch_size=b.mlp_batch_size,
            max_epochs=b.mlp_epochs,
            patience=b.mlp_patience,
            seed=seed,
        ),
        forest=ForestConfig(
            n_trees=b.n_trees, max_depth=b.max_depth, min_leaf=b.min_leaf, seed=seed, jobs=config.experiment.jobs
        ),
    )


def _train(config: ExperimentConfig, splits: Splits, seed: int) -> PipelineResult:
    return run_pipeline(
        splits.train,
        blackbox_spec(config, seed),
        config.experiment.local_kind,
        _seeded(config, seed),
        probe=splits.probe,
        probe_fraction=config.data.probe_fraction,
    )


def _seeded(config: ExperimentConfig, seed: int) -> TrainConfig:
    return replace(config.estimator, seed=seed)


def _lime_config(config: ExperimentConfig, seed: int) -> LimeConfig:
    s = config.baselines
    return LimeConfig(
        n_perturbations=s.lime_perturbations,
        kernel_width=s.lime_kernel_width,
        perturbation_scale=s.lime_scale,
        local_kind=config.experiment.local_kind,
        alpha=config.estimator.local_alpha,
        tree_depth=config.estimator.tree_depth,
        seed=seed,
    )


def _check_lime(config: ExperimentConfig, splits: Splits):
    """CSV feature counts are only known once the schema is encoded."""
    if "lime" in config.experiment.methods:
        problems = _lime_config(config, 0).validate(splits.train.n_features)
        if problems:
            raise ConfigError([f"[baselines] {p}" for p in problems])


def _evaluate(config: ExperimentConfig, result: PipelineResult, splits: Splits, seed: int, methods=None):
    e, s = config.experiment, config.baselines
    return evaluate_pipeline(
        result,
        splits.test,
        methods=methods or e.methods,
        lime_config=_lime_config(config, seed),
        neighborhood_config=ForestConfig(
            n_trees=s.forest_trees, min_leaf=s.forest_min_leaf, seed=seed, jobs=e.jobs
        ),
        maple_k_grid=list(range(1, min(splits.test.n_features, s.maple_max_k) + 1)),
        awd_norm=e.awd_norm,
        top_k=e.top_k or None,
        dataset_name=splits.name,
        seed=seed,
        jobs=e.jobs,
    )


def _save_artifacts(out: RunOutput, result: PipelineResult, splits: Splits):
    save_model(result.model, out.path("blackbox.json"))
    save_baseline(result.baseline, out.path("baseline.json"))
    save_estimator(result.estimator, out.path("estimator.json"))
    write_artifact(
        out.path("auxiliary.json"),
        "auxiliary",
        {"train": result.aux_train.to_dict(), "probe": result.aux_probe.to_dict()},
        feature_names=splits.train.feature_names,
        local_kind=result.local_kind,
    )
    if splits.scaler is not None:
        write_artifact(out.path("scaler.json"), "scaler", splits.scaler.to_dict())
    out.write_csv("learning_curve.csv", result.curve.to_frame())


def init_config(args):
    target = Path(args.file)
    if target.exists() and not args.force:
        raise ConfigError([f"{target} already exists; pass --force to overwrite it"])
    shutil.copy(EXAMPLE_PATH, target)
    print(f"Wrote example experiment config to {target}")


def train(args):
    config = _resolve(args)
    seed = config.experiment.seed
    splits = load_splits(config, seed)
    print(f"Training on {splits.train.n_samples} rows of {splits.name} ({config.blackbox.kind} black box)")
    with RunOutput(_output_dir(args, config), "train") as out:
        out.write_config(config.to_ini())
        result = _train(config, splits, seed)
        _save_artifacts(out, result, splits)
        first, last = result.curve.quartile_means() if result.curve.records else (0.0, 0.0)
    print(f"Reward: first quarter {first:.5f}, last quarter {last:.5f}")
    print(f"Success: model written to {out.directory}")


@dataclass
class TrainedModel:
    config: ExperimentConfig
    model: BlackBoxModel
    baseline: BaselineModel
    estimator: WeightEstimator
    aux_train: AuxiliaryDataset
    aux_probe: AuxiliaryDataset
    feature_names: list[str]
    scaler: MinMaxScaler | None


def load_trained(model_dir: Path) -> TrainedModel:
    model_dir = Path(model_dir)
    if not model_dir.is_dir():
        raise ArtifactError(model_dir, "is not a directory")
    if not (model_dir / CONFIG_FILE).is_file():
        raise ArtifactError(model_dir / CONFIG_FILE)
    store = ArtifactStore(model_dir)
    header, aux = store.load("auxiliary", "auxiliary")
    scaler = None
    if store.exists("scaler"):
        scaler = MinMaxScaler.from_dict(store.load("scaler", "scaler")[1])
    return TrainedModel(
        config=load_config(model_dir / CONFIG_FILE),
        model=load_model(store.path("blackbox")),
        baseline=load_baseline(store.path("baseline")),
        estimator=load_estimator(store.path("estimator")),
        aux_train=AuxiliaryDataset.from_dict(aux["train"]),
        aux_probe=AuxiliaryDataset.from_dict(aux["probe"]),
        feature_names=list(header["feature_names"]),
        scaler=scaler,
    )


def explain(args):
    trained = load_trained(args.model_dir)
    rows = Path(args.rows)
    if not rows.is_file():
        raise LoadError(f"rows file {rows} not found")
    frame = pd.read_csv(rows)
    missing = [name for name in trained.feature_names if name not in frame.columns]
    if missing:
        raise LoadError(f"rows file lacks feature columns {missing}")
    X = frame[trained.feature_names].to_numpy(dtype=np.float64)
    if trained.scaler is not None:
        X = trained.scaler.transform(X)
    ids = frame["instance_id"].tolist() if "instance_id" in frame.columns else list(range(len(frame)))
    e = trained.config.experiment
    explanations = explain_batch(
        X, trained.estimator, trained.aux_train, trained.model, e.local_kind,
        alpha=trained.config.estimator.local_alpha, tree_depth=trained.config.estimator.tree_depth,
        top_k=e.top_k or None, instance_ids=ids, jobs=e.jobs,
    )
    output = Path(args.output) if args.output else Path(args.model_dir).parent / f"{Path(args.model_dir).name}-explain"
    with RunOutput(output, "explain") as out:
        out.write_config(trained.config.to_ini())
        out.write_csv("explanations.csv", explanations_frame(explanations, trained.feature_names, trained.scaler))
    print(f"Success: {len(explanations)} explanations written to {out.directory / 'explanations.csv'}")


def _reports_frame(reports) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in reports]).drop(columns=["awd_deciles"])


def evaluate(args):
    if args.model_dir:
        trained = load_trained(args.model_dir)
        config = trained.config
        seed = config.experiment.seed
        splits = load_splits(config, seed)
        _check_lime(config, splits)
        result = PipelineResult(
            model=trained.model,
            baseline=trained.baseline,
            aux_train=trained.aux_train,
            aux_probe=trained.aux_probe,
            local_kind=config.experiment.local_kind,
            config=_seeded(config, seed),
            estimator=trained.estimator,
        )
    else:
        config = _resolve(args)
        seed = config.experiment.seed
        splits = load_splits(config, seed)
        result = None
        _check_lime(config, splits)
    with RunOutput(_output_dir(args, config, suffix="evaluate"), "evaluate") as out:
        out.write_config(config.to_ini())
        if result is None:
            result = _train(config, splits, seed)
            out.write_csv("learning_curve.csv", result.curve.to_frame())
        evaluation = _evaluate(config, result, splits, seed)
        out.write_json("metrics.json", {m: r.to_dict() for m, r in evaluation.reports.items()})
        out.write_csv("metrics.csv", _reports_frame(evaluation.reports.values()))
        explanations = [e for method in evaluation.explanations.values() for e in method]
        out.write_csv("explanations.csv", explanations_frame(explanations, splits.test.feature_names, splits.scaler))
    for method, report in evaluation.reports.items():
        overall = f"APR {report.apr:.4f}" if report.apr is not None else f"MAE {report.mae:.4f}"
        r2 = "n/a" if report.r2 is None else f"{report.r2:.4f}"
        print(f"{method:>10}: {overall}, LMAE {report.lmae:.4f}, R2 {r2}")
    print(f"Success: results written to {out.directory}")


def sweep(args):
    config = _resolve(args)
    seed = config.experiment.seed
    splits = load_splits(config, seed)
    result = sweep_lambda(
        config.experiment.lambdas,
        splits.train,
        blackbox_spec(config, seed),
        config.experiment.local_kind,
        _seeded(config, seed),
        probe=splits.probe,
        probe_fraction=config.data.probe_fraction,
        jobs=config.experiment.jobs,
    )
    with RunOutput(_output_dir(args, config, suffix="sweep"), "sweep") as out:
        out.write_config(config.to_ini())
        out.write_csv("sweep.csv", result.to_frame())
        curves = [curve.to_frame().assign(**{"lambda": lam}) for lam, curve in result.curves.items()]
        out.write_csv("learning_curves.csv", pd.concat(curves, ignore_index=True))
    for entry in result.entries:
        marker = " <- chosen" if entry.chosen else ""
        print(f"lambda {entry.lam:g}: LMAE {entry.validation_lmae:.5f}, "
              f"selection prob {entry.mean_selection_prob:.4f}{marker}")
    print(f"Success: sweep written to {out.directory / 'sweep.csv'}")


def ordering_summary(deciles: dict[str, pd.DataFrame]) -> dict:
    """How often the reinforcement-selected surrogate beats each neighborhood method per band."""
    summary: dict = {}
    if "reinforce" in deciles:
        ours = deciles["reinforce"]["mean_awd"].to_numpy()
        for other in COMPARED_TO:
            if other in deciles:
                theirs = deciles[other]["mean_awd"].to_numpy()
                valid = ~(np.isnan(ours) | np.isnan(theirs))
                wins = int(np.sum(ours[valid] < theirs[valid]))
                summary[f"reinforce_below_{other}"] = {"wins": wins, "bands": int(valid.sum()), "passed": wins >= 8}
    if "lime" in deciles:
        lime = deciles["lime"]["mean_awd"].to_numpy()
        lime = lime[~np.isnan(lime)]
        summary["lime_above_floor"] = {
            "floor": LIME_AWD_FLOOR,
            "minimum": float(lime.min()) if lime.size else None,
            "passed": bool(lime.size and np.all(lime > LIME_AWD_FLOOR)),
        }
    return summary


def synth_bench(args):
    config = _resolve(args)
    if not config.data.synthetic:
        raise ConfigError([f"[data] synth-bench needs a synthetic source, got '{config.data.source}'"])
    methods = [m for m in ("reinforce", "lime", "silo", "maple") if m in config.experiment.methods]
    per_method: dict[str, list] = {m: [] for m in methods}
    with RunOutput(_output_dir(args, config, suffix="synth-bench"), "synth-bench") as out:
        out.write_config(config.to_ini())
        reports = []
        for run in range(config.experiment.runs):
            seed = config.experiment.seed + run
            print(f"Run {run + 1}/{config.experiment.runs} (seed {seed})")
            splits = load_splits(config, seed)
            result = _train(config, splits, seed)
            out.write_csv(f"learning_curve_run{run}.csv", result.curve.to_frame())
            evaluation = _evaluate(config, result, splits, seed, methods=methods)
            reports.extend(evaluation.reports.values())
            true_coef = splits.test.true_coefficients()
            distance = splits.test.boundary_distance()
            for method in methods:
                estimated = np.vstack([e.coefficients for e in evaluation.explanations[method]])
                per_method[method].append((distance, awd(true_coef, estimated, norm=config.experiment.awd_norm)))
        deciles = {m: decile_bucket_awd(runs, method=m) for m, runs in per_method.items()}
        for method, frame in deciles.items():
            out.write_csv(f"deciles_{method}.csv", frame)
        out.write_csv("deciles.csv", pd.concat(deciles.values(), ignore_index=True))
        out.write_json("metrics.json", [r.to_dict() for r in reports])
        summary = ordering_summary(deciles)
        summary["awd_norm"] = config.experiment.awd_norm
        out.write_json("summary.json", summary)
    for check, outcome in summary.items():
        if isinstance(outcome, dict):
            print(f"{'✅' if outcome['passed'] else '❌'} {check}: {outcome}")
    print(f"Success: benchmark written to {out.directory}")


def read_groups(path: Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"grouping file {path} not found")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    parser.read(path)
    if not parser.has_section("groups") or not parser["groups"]:
        raise LoadError(f"grouping file {path} has no [groups] entries")
    return dict(parser["groups"].items())


def subgroup_table(frame: pd.DataFrame, groups: dict[str, str], instances: bool = False) -> pd.DataFrame:
    """Per group and method, mean |coefficient| per feature; groups matching nothing stay, flagged."""
    coef_columns = [c for c in frame.columns if c.startswith("coef_")]
    if not coef_columns:
        raise LoadError("explanations file has no coef_ columns")
    methods = sorted(frame["method"].unique()) if "method" in frame.columns else [""]
    rows = []
    for label, predicate in groups.items():
        try:
            members = frame.query(predicate)
        except Exception as ex:
            raise ConfigError([f"group '{label}': cannot evaluate predicate {predicate!r}: {ex}"]) from None
        for method in methods:
            subset = members[members["method"] == method] if method else members
            magnitude = subset[coef_columns].abs()
            if instances:
                for _, row in subset.iterrows():
                    rows.append({"group": label, "method": method, "instance_id": row.get("instance_id"),
                                 **{c[5:]: abs(row[c]) for c in coef_columns}})
                continue
            rows.append({
                "group": label,
                "method": method,
                "n_instances": len(subset),
                "empty": subset.empty,
                **{c[5:]: (magnitude[c].mean() if not subset.empty else np.nan) for c in coef_columns},
            })
    return pd.DataFrame(rows)


def subgroup_report(args):
    explanations = Path(args.explanations)
    if not explanations.is_file():
        raise LoadError(f"explanations file {explanations} not found")
    frame = pd.read_csv(explanations)
    groups = read_groups(args.groups)
    table = subgroup_table(frame, groups)
    output = Path(args.output) if args.output else explanations.parent / "subgroups"
    with RunOutput(output, "subgroup-report") as out:
        out.write_csv("subgroups.csv", table)
        if args.instances:
            out.write_csv("instances.csv", subgroup_table(frame, groups, instances=True))
    for flagged in table.loc[table["empty"], "group"].unique():
        print(f"⚠️  group '{flagged}' matched no explanations")
    print(f"Success: subgroup report written to {out.directory}")


def _output_dir(args, config: ExperimentConfig, suffix: str = "") -> Path:
    if getattr(args, "output", None):
        return Path(args.output)
    directory = config.output_dir()
    return directory.with_name(f"{directory.name}-{suffix}") if suffix else directory
