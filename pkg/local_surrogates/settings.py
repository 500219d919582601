import configparser
import dataclasses
import io
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import platformdirs

from local_surrogates.baselines import MAPLE_MAX_K
from local_surrogates.blackbox import BLACKBOX_KINDS
from local_surrogates.data import SYNTHETIC_DIM, SYNTHETIC_KINDS
from local_surrogates.errors import ConfigError
from local_surrogates.estimator import TrainConfig
from local_surrogates.interpretable import LOCAL_KINDS
from local_surrogates.metrics import AWD_NORMS
from local_surrogates.pipeline import DEFAULT_LAMBDA_GRID, METHODS

APP_NAME = "local_surrogates"
OUTPUT_ENV = "LOCAL_SURROGATES_OUTPUT"
EXTERNAL_CSV_ENV = "LOCAL_SURROGATES_EXTERNAL_CSV"
EXAMPLE_PATH = Path(__file__).parent / "experiment.ini.example"
DATA_SOURCES = (*SYNTHETIC_KINDS, "csv")
SCALE_MODES = ("auto", "yes", "no")
# options every command derives from another section
DERIVED_OPTIONS = {("estimator", "seed"): "it follows [experiment] seed"}


def get_output_root() -> Path:
    """$LOCAL_SURROGATES_OUTPUT, else the platform's per-user data directory."""
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(platformdirs.user_data_dir(appname=APP_NAME, appauthor=False, ensure_exists=True))


@dataclass
class ExperimentSection:
    name: str = "experiment"
    seed: int = 0
    runs: int = 1
    output_dir: str = ""
    local_kind: str = "ridge"
    methods: tuple[str, ...] = METHODS
    lambdas: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    awd_norm: str = "mean_abs"
    top_k: int = 0
    jobs: int = 1


@dataclass
class DataSection:
    source: str = "syn1"
    n_train: int = 1000
    n_probe: int = 1000
    n_test: int = 1000
    probe_fraction: float = 0.1
    csv_path: str = ""
    schema_path: str = ""
    train_fraction: float = 0.8
    probe_split: float = 0.1
    test_fraction: float = 0.1
    subsample: int = 0
    scale: str = "auto"

    @property
    def synthetic(self) -> bool:
        return self.source in SYNTHETIC_KINDS

    def scaled(self) -> bool:
        return self.scale == "yes" or (self.scale == "auto" and not self.synthetic)


@dataclass
class BlackBoxSection:
    kind: str = "oracle"
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    mlp_epochs: int = 200
    mlp_batch_size: int = 256
    mlp_patience: int = 10
    mlp_learning_rate: float = 1e-3


@dataclass
class BaselinesSection:
    lime_perturbations: int = 5000
    lime_kernel_width: float | None = None
    lime_scale: float = 1.0
    forest_trees: int = 100
    forest_min_leaf: int = 10
    maple_max_k: int = MAPLE_MAX_K


SECTIONS = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "blackbox": BlackBoxSection,
    "estimator": TrainConfig,
    "baselines": BaselinesSection,
}


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, tuple | list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, hint):
    """Convert one INI string to the annotated field type."""
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in typing.get_args(hint) if a is not type(None)]
        return None if raw == "" else _parse(raw, inner[0])
    if origin is tuple:
        item = typing.get_args(hint)[0]
        return tuple(_parse(part, item) for part in raw.split(",") if part.strip())
    if hint is bool:
        lowered = raw.lower()
        if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError(f"not a boolean: {raw!r}")
        return configparser.ConfigParser.BOOLEAN_STATES[lowered]
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    return raw


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    blackbox: BlackBoxSection = field(default_factory=BlackBoxSection)
    estimator: TrainConfig = field(default_factory=TrainConfig)
    baselines: BaselinesSection = field(default_factory=BaselinesSection)

    def apply(self, section: str, key: str, raw: str, problems: list[str]):
        if section not in SECTIONS:
            problems.append(f"unknown section [{section}]")
            return
        target = getattr(self, section)
        hints = typing.get_type_hints(type(target))
        if key not in hints or key not in {f.name for f in dataclasses.fields(target)}:
            problems.append(f"unknown option '{key}' in [{section}]")
            return
        if (section, key) in DERIVED_OPTIONS:
            problems.append(f"[{section}] {key} cannot be set: {DERIVED_OPTIONS[section, key]}")
            return
        try:
            setattr(target, key, _parse(raw, hints[key]))
        except ValueError as ex:
            problems.append(f"[{section}] {key}: {ex}")

    def validate(self) -> list[str]:
        e, d, b, s = self.experiment, self.data, self.blackbox, self.baselines
        problems = [f"[estimator] {p}" for p in self.estimator.validate()]
        if e.runs < 1:
            problems.append("[experiment] runs must be >= 1")
        if e.local_kind not in LOCAL_KINDS:
            problems.append(f"[experiment] local_kind must be one of {LOCAL_KINDS}")
        unknown = [m for m in e.methods if m not in METHODS]
        if unknown or not e.methods:
            problems.append(f"[experiment] methods must be a nonempty subset of {METHODS}")
        if not e.lambdas or any(lam < 0 for lam in e.lambdas):
            problems.append("[experiment] lambdas must be a nonempty list of nonnegative values")
        if e.awd_norm not in AWD_NORMS:
            problems.append(f"[experiment] awd_norm must be one of {AWD_NORMS}")
        if e.top_k < 0:
            problems.append("[experiment] top_k must be >= 0 (0 disables truncation)")
        if e.jobs < 1:
            problems.append("[experiment] jobs must be >= 1")
        if d.source not in DATA_SOURCES:
            problems.append(f"[data] source must be one of {DATA_SOURCES}")
        if d.scale not in SCALE_MODES:
            problems.append(f"[data] scale must be one of {SCALE_MODES}")
        if d.synthetic:
            if d.n_train < 3 or d.n_test < 1 or d.n_probe < 0:
                problems.append("[data] need n_train >= 3, n_test >= 1 and n_probe >= 0")
            if d.n_probe == 0 and not 0 < d.probe_fraction < 1:
                problems.append("[data] probe_fraction must be in (0, 1) when n_probe is 0")
        elif d.source == "csv":
            if not d.csv_path or not d.schema_path:
                problems.append("[data] csv source needs csv_path and schema_path")
            for name in ("train_fraction", "probe_split", "test_fraction"):
                if not getattr(d, name) > 0:
                    problems.append(f"[data] {name} must be positive")
            total = d.train_fraction + d.probe_split + d.test_fraction
            if abs(total - 1.0) > 1e-9:
                problems.append(f"[data] split fractions must sum to 1, got {total:g}")
            if d.subsample < 0:
                problems.append("[data] subsample must be >= 0")
        if b.kind not in BLACKBOX_KINDS:
            problems.append(f"[blackbox] kind must be one of {BLACKBOX_KINDS}")
        if b.kind == "oracle" and not d.synthetic:
            problems.append("[blackbox] the oracle black box needs a synthetic data source")
        if b.n_trees < 1 or b.min_leaf < 1:
            problems.append("[blackbox] n_trees and min_leaf must be >= 1")
        if b.max_depth is not None and b.max_depth < 1:
            problems.append("[blackbox] max_depth must be >= 1 or empty")
        if b.mlp_epochs < 0 or b.mlp_batch_size < 1 or b.mlp_patience < 1 or not b.mlp_learning_rate > 0:
            problems.append("[blackbox] MLP epochs >= 0, batch size >= 1, patience >= 1 and learning rate > 0")
        if s.lime_perturbations < 1 or not s.lime_scale > 0:
            problems.append("[baselines] lime_perturbations must be >= 1 and lime_scale positive")
        if d.synthetic and "lime" in e.methods and 1 <= s.lime_perturbations < SYNTHETIC_DIM + 2:
            problems.append(f"[baselines] lime_perturbations must be >= {SYNTHETIC_DIM + 2} (features + 2)")
        if s.lime_kernel_width is not None and not s.lime_kernel_width > 0:
            problems.append("[baselines] lime_kernel_width must be positive or empty")
        if s.forest_trees < 1 or s.forest_min_leaf < 1 or s.maple_max_k < 1:
            problems.append("[baselines] forest_trees, forest_min_leaf and maple_max_k must be >= 1")
        return problems

    def to_parser(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            values = dataclasses.asdict(getattr(self, section))
            parser[section] = {
                key: _format(value) for key, value in values.items() if (section, key) not in DERIVED_OPTIONS
            }
        return parser

    def to_ini(self) -> str:
        buffer = io.StringIO()
        self.to_parser().write(buffer)
        return buffer.getvalue()

    def output_dir(self) -> Path:
        if self.experiment.output_dir:
            return Path(self.experiment.output_dir)
        return get_output_root() / self.experiment.name


def load_config(
    filepath: Path | None = None, overrides: list[tuple[str, str, str]] | None = None
) -> ExperimentConfig:
    """
    Resolve defaults, then the INI file, then (section, key, value) overrides; every
    problem is collected and reported in one ConfigError.
    """
    config = ExperimentConfig()
    problems: list[str] = []
    if filepath is not None:
        filepath = Path(filepath)
        if not filepath.is_file():
            raise ConfigError([f"config file {filepath} not found! Run\n\n local_surrogates init-config"])
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(filepath)
        except configparser.Error as ex:
            raise ConfigError([f"config file {filepath} could not be parsed: {ex}"]) from None
        for section in parser.sections():
            for key, raw in parser[section].items():
                config.apply(section, key, raw, problems)
    for section, key, raw in overrides or []:
        config.apply(section, key, raw, problems)
    problems.extend(config.validate())
    if problems:
        raise ConfigError(problems)
    return config
