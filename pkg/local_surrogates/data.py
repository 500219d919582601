"""Synthetic generators, CSV ingestion, preprocessing and deterministic splitting."""

import configparser
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from local_surrogates.errors import ConfigError, InvalidInputError, LoadError
from local_surrogates.numerics import Matrix, MinMaxScaler, RandomSource, one_hot_encode

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("syn1", "syn2", "syn3")
SYNTHETIC_DIM = 11
TASKS = ("regression", "classification")
MISSING_CATEGORY = "__missing__"
COLUMN_ROLES = ("numeric", "categorical", "label", "ignore")

# ground-truth coefficients on either side of the regime boundary
_LEFT_COEF = np.array([1.0, 2.0] + [0.0] * (SYNTHETIC_DIM - 2))
_RIGHT_COEF = np.array([0.0, 0.0, 1.0, 2.0] + [0.0] * (SYNTHETIC_DIM - 4))


def _check_synthetic(kind: str, X: NDArray) -> NDArray:
    if kind not in SYNTHETIC_KINDS:
        raise InvalidInputError(f"invalid input: unknown synthetic kind '{kind}'")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != SYNTHETIC_DIM:
        raise InvalidInputError(
            f"invalid input: {kind} expects {SYNTHETIC_DIM} features, got {X.shape[-1]}"
        )
    return X


def boundary_statistic(kind: str, X: NDArray) -> NDArray[np.float64]:
    """Signed statistic whose sign picks the regime; zero on the boundary."""
    X = _check_synthetic(kind, X)
    x10, x11 = X[..., 9], X[..., 10]
    if kind == "syn1":
        return x10
    if kind == "syn2":
        return x10 + np.exp(x11) - 1.0
    return x10 + x11**3


def true_coefficients(kind: str, X: NDArray) -> NDArray[np.float64]:
    right = boundary_statistic(kind, X) >= 0
    return np.where(right[..., None], _RIGHT_COEF, _LEFT_COEF)


def synthetic_labels(kind: str, X: NDArray) -> NDArray[np.float64]:
    X = _check_synthetic(kind, X)
    left = X[..., 0] + 2.0 * X[..., 1]
    right = X[..., 2] + 2.0 * X[..., 3]
    return np.where(boundary_statistic(kind, X) >= 0, right, left)


@dataclass
class Dataset:
    features: Matrix
    labels: NDArray[np.float64]
    feature_names: list[str]
    task: str = "regression"
    synthetic_kind: str | None = None
    row_ids: NDArray[np.int64] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.features.ndim != 2:
            raise InvalidInputError(f"features must be a matrix, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise InvalidInputError(
                f"{len(self.feature_names)} feature names for {self.features.shape[1]} columns"
            )
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task '{self.task}'")
        if self.row_ids is None:
            self.row_ids = np.arange(self.features.shape[0])

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: NDArray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            features=self.features[indices],
            labels=self.labels[indices],
            row_ids=self.row_ids[indices],
        )

    def scaled(self, scaler: MinMaxScaler) -> "Dataset":
        return replace(self, features=scaler.transform(self.features))

    def true_coefficients(self) -> NDArray[np.float64]:
        if self.synthetic_kind is None:
            raise InvalidInputError("ground-truth coefficients exist only for synthetic data")
        return true_coefficients(self.synthetic_kind, self.features)

    def boundary_distance(self) -> NDArray[np.float64]:
        if self.synthetic_kind is None:
            raise InvalidInputError("boundary distance exists only for synthetic data")
        return np.abs(boundary_statistic(self.synthetic_kind, self.features))


def gen_syn(kind: str, n: int, seed: int) -> Dataset:
    if kind not in SYNTHETIC_KINDS:
        raise InvalidInputError(f"invalid input: unknown synthetic kind '{kind}'")
    if n < 1:
        raise InvalidInputError(f"invalid input: n must be >= 1, got {n}")
    rng = RandomSource(seed).child("synthetic")
    X = rng.generator.standard_normal((n, SYNTHETIC_DIM))
    return Dataset(
        features=X,
        labels=synthetic_labels(kind, X),
        feature_names=[f"X{i + 1}" for i in range(SYNTHETIC_DIM)],
        task="regression",
        synthetic_kind=kind,
    )


@dataclass
class SplitSpec:
    train: float = 0.8
    probe: float = 0.1
    test: float = 0.1
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        for name in ("train", "probe", "test"):
            if not getattr(self, name) > 0:
                problems.append(f"split fraction '{name}' must be positive")
        if abs(self.train + self.probe + self.test - 1.0) > 1e-9:
            problems.append(
                f"split fractions must sum to 1, got {self.train + self.probe + self.test:g}"
            )
        return problems


def split_indices(n: int, spec: SplitSpec) -> tuple[NDArray, NDArray, NDArray]:
    problems = spec.validate()
    if problems:
        raise ConfigError(problems)
    if n < 3:
        raise InvalidInputError(f"invalid input: need at least 3 rows to split, got {n}")
    order = RandomSource(spec.seed).child("split").generator.permutation(n)
    n_train = max(1, int(round(spec.train * n)))
    n_probe = max(1, int(round(spec.probe * n)))
    n_train = min(n_train, n - n_probe - 1)
    return order[:n_train], order[n_train:n_train + n_probe], order[n_train + n_probe:]


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    train, probe, test = split_indices(dataset.n_samples, spec)
    return dataset.subset(train), dataset.subset(probe), dataset.subset(test)


def subsample_indices(n_rows: int, n: int, seed: int) -> NDArray[np.int64]:
    """Sorted indices of n rows drawn without replacement; all rows when n >= n_rows."""
    if n >= n_rows:
        return np.arange(n_rows)
    picked = RandomSource(seed).child("split", 1).generator.choice(n_rows, n, replace=False)
    return np.sort(picked)


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    if n >= dataset.n_samples:
        return dataset
    return dataset.subset(subsample_indices(dataset.n_samples, n, seed))


def fit_scaler(train: Dataset) -> MinMaxScaler:
    return MinMaxScaler.fit(train.features)


@dataclass
class ColumnSpec:
    name: str
    role: str
    vocabulary: list[str] | None = None


@dataclass
class Schema:
    columns: list[ColumnSpec]
    task: str = "regression"
    positive_label: str | None = None
    missing_tokens: list[str] = field(default_factory=lambda: ["", "?", "NA"])

    @property
    def label(self) -> ColumnSpec:
        return next(c for c in self.columns if c.role == "label")

    def validate(self) -> list[str]:
        problems = []
        labels = [c for c in self.columns if c.role == "label"]
        if len(labels) != 1:
            problems.append(f"schema needs exactly one label column, found {len(labels)}")
        for column in self.columns:
            if column.role not in COLUMN_ROLES:
                problems.append(f"column '{column.name}' has unknown role '{column.role}'")
            if column.vocabulary is not None and len(set(column.vocabulary)) != len(column.vocabulary):
                problems.append(f"column '{column.name}' vocabulary has duplicates")
        if self.task not in TASKS:
            problems.append(f"unknown task '{self.task}'")
        if self.task == "classification" and self.positive_label is None:
            problems.append("classification schema needs a positive_label")
        return problems


def read_schema(path: Path) -> Schema:
    """
    Read an INI schema::

        [dataset]
        task = classification
        positive_label = >50K
        missing = ?, NA

        [columns]
        age = numeric
        workclass = categorical
        sex = categorical: Male | Female
        income = label
        fnlwgt = ignore
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"schema file {path} not found")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep column names case-sensitive
    parser.read(path)
    if not parser.has_section("columns"):
        raise LoadError(f"schema file {path} has no [columns] section")
    columns = []
    for name, role in parser["columns"].items():
        role_name, _, vocab = role.partition(":")
        vocabulary = [v.strip() for v in vocab.split("|")] if vocab.strip() else None
        columns.append(ColumnSpec(name=name, role=role_name.strip(), vocabulary=vocabulary))
    dataset = parser["dataset"] if parser.has_section("dataset") else {}
    schema = Schema(
        columns=columns,
        task=dataset.get("task", "regression"),
        positive_label=dataset.get("positive_label"),
    )
    if "missing" in dataset:
        schema.missing_tokens = [t.strip() for t in dataset["missing"].split(",")]
    problems = schema.validate()
    if problems:
        raise ConfigError(problems)
    return schema


@dataclass
class CsvTable:
    """Raw string cells of a CSV file, keyed by schema column."""

    frame: pd.DataFrame
    schema: Schema

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def _is_missing(self, series: pd.Series) -> NDArray[np.bool_]:
        return series.str.strip().isin(self.schema.missing_tokens).to_numpy()

    def _numeric(self, name: str, rows: NDArray) -> NDArray[np.float64]:
        series = self.frame[name]
        missing = self._is_missing(series)
        values = np.empty(len(series))
        for i, cell in enumerate(series):
            if missing[i]:
                values[i] = np.nan
                continue
            try:
                values[i] = float(cell)
            except ValueError:
                raise LoadError(f"unparseable numeric cell '{cell}'", row=i + 1, column=name) from None
        fit_rows = rows[~missing[rows]]
        median = float(np.median(values[fit_rows])) if fit_rows.size else 0.0
        return np.where(np.isnan(values), median, values)

    def _categorical(self, column: ColumnSpec, rows: NDArray) -> tuple[Matrix, list[str]]:
        series = self.frame[column.name].str.strip()
        missing = self._is_missing(series)
        cells = np.where(missing, MISSING_CATEGORY, series.to_numpy(dtype=object))
        if column.vocabulary is not None:
            vocabulary = list(column.vocabulary)
        else:
            # first appearance order within the vocabulary rows
            vocabulary = list(dict.fromkeys(cells[rows]))
        if MISSING_CATEGORY in cells[rows] and MISSING_CATEGORY not in vocabulary:
            vocabulary.append(MISSING_CATEGORY)
        if not vocabulary:
            vocabulary = [MISSING_CATEGORY]
        names = [f"{column.name}={v}" for v in vocabulary]
        return one_hot_encode(list(cells), vocabulary), names

    def _labels(self) -> NDArray[np.float64]:
        label = self.schema.label
        series = self.frame[label.name].str.strip()
        if self.schema.task == "classification":
            return (series == self.schema.positive_label).to_numpy(dtype=np.float64)
        values = np.empty(len(series))
        for i, cell in enumerate(series):
            try:
                values[i] = float(cell)
            except ValueError:
                raise LoadError(f"unparseable label '{cell}'", row=i + 1, column=label.name) from None
        return values

    def to_dataset(self, vocabulary_rows: NDArray | None = None) -> Dataset:
        """Encode the table; medians and vocabularies come from vocabulary_rows only."""
        rows = np.arange(self.n_rows) if vocabulary_rows is None else np.asarray(vocabulary_rows)
        blocks, names = [], []
        for column in self.schema.columns:
            if column.role == "numeric":
                blocks.append(self._numeric(column.name, rows)[:, None])
                names.append(column.name)
            elif column.role == "categorical":
                encoded, encoded_names = self._categorical(column, rows)
                blocks.append(encoded)
                names.extend(encoded_names)
        features = np.hstack(blocks) if blocks else np.zeros((self.n_rows, 0))
        return Dataset(
            features=features.reshape(self.n_rows, len(names)),
            labels=self._labels(),
            feature_names=names,
            task=self.schema.task,
        )


def read_table(path: Path, schema: Schema) -> CsvTable:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"data file {path} not found")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise LoadError(f"data file {path} is empty") from None
    except pd.errors.ParserError as ex:
        raise LoadError(f"data file {path} could not be parsed: {ex}") from None
    frame.columns = [c.strip() for c in frame.columns]
    for column in schema.columns:
        if column.name not in frame.columns:
            raise LoadError(f"missing column in {path.name}", column=column.name)
    unknown = [c for c in frame.columns if c not in {col.name for col in schema.columns}]
    if unknown:
        raise LoadError(f"schema does not cover columns {unknown}")
    return CsvTable(frame=frame, schema=schema)


def load_csv(path: Path, schema: Schema, vocabulary_rows: NDArray | None = None) -> Dataset:
    return read_table(path, schema).to_dataset(vocabulary_rows)
