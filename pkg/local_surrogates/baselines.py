"""LIME, SILO and MAPLE comparison explainers over the shared local-model machinery."""

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from local_surrogates.blackbox import (
    AuxiliaryDataset,
    BlackBoxModel,
    ForestConfig,
    RandomForest,
    distillation_targets,
    fit_random_forest,
)
from local_surrogates.cart import LEAF, RegressionTree
from local_surrogates.errors import DegenerateWeightsError, InvalidInputError
from local_surrogates.interpretable import (
    DEFAULT_ALPHA,
    LOCAL_KINDS,
    MAX_TREE_DEPTH,
    Explanation,
    LocalModel,
    fit_local,
    top_weighted,
)
from local_surrogates.numerics import MinMaxScaler, RandomSource, as_matrix

logger = logging.getLogger(__name__)

NEIGHBORHOOD_SOURCES = ("lime", "silo", "maple")
MAPLE_MAX_K = 25
K_TOLERANCE = 1e-12


@dataclass
class LimeConfig:
    n_perturbations: int = 5000
    kernel_width: float | None = None  # None: 0.75 * sqrt(d)
    perturbation_scale: float = 1.0
    local_kind: str = "ridge"
    alpha: float = DEFAULT_ALPHA
    tree_depth: int = MAX_TREE_DEPTH
    seed: int = 0

    def width(self, d: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * np.sqrt(d)

    def validate(self, d: int) -> list[str]:
        problems = []
        if self.n_perturbations < d + 2:
            problems.append(f"LIME needs at least d + 2 = {d + 2} perturbations, got {self.n_perturbations}")
        if not self.width(d) > 0:
            problems.append("LIME kernel width must be positive")
        if not self.perturbation_scale > 0:
            problems.append("LIME perturbation scale must be positive")
        if self.local_kind not in LOCAL_KINDS:
            problems.append(f"unknown local model kind '{self.local_kind}'")
        return problems


@dataclass
class NeighborhoodWeights:
    weights: NDArray[np.float64]
    source: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.source not in NEIGHBORHOOD_SOURCES:
            raise InvalidInputError(f"unknown neighborhood source '{self.source}'")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise InvalidInputError("invalid input: neighborhood weights must be finite and nonnegative")
        if not self.weights.any():
            raise DegenerateWeightsError(f"degenerate weights: {self.source} neighborhood is empty")


def lime_explain(
    x_t: NDArray,
    model: BlackBoxModel,
    config: LimeConfig,
    train_stats: MinMaxScaler,
    instance_id: int = 0,
) -> Explanation:
    """
    Gaussian perturbations around x_t in min-max scaled space, labelled by the black box
    and weighted by exp(-||z - z_t||^2 / sigma^2). The surrogate is fitted in the original
    feature space so coefficients are comparable with every other method.
    """
    x_t = np.asarray(x_t, dtype=np.float64).ravel()
    d = x_t.size
    problems = config.validate(d)
    if problems:
        raise InvalidInputError("invalid LIME config: " + "; ".join(problems))
    rng = RandomSource(config.seed).child("perturbation", instance_id)
    z_t = train_stats.transform(x_t[None, :])[0]
    noise = rng.generator.standard_normal((config.n_perturbations, d))
    Z = z_t + config.perturbation_scale * noise
    X = train_stats.inverse_transform(Z)
    targets = distillation_targets(model, X)
    sigma = config.width(d)
    sq_dist = np.sum((Z - z_t) ** 2, axis=1)
    kernel = np.exp(-sq_dist / sigma**2)
    if not kernel.any():
        logger.warning("LIME kernel underflowed for instance %d; using uniform weights", instance_id)
        kernel = np.ones_like(kernel)
    NeighborhoodWeights(kernel, "lime")
    local = fit_local(config.local_kind, X, targets, kernel, alpha=config.alpha, max_depth=config.tree_depth)
    return Explanation(
        instance_id=instance_id,
        method="lime",
        features=x_t,
        weights=kernel,
        local_model=local,
        local_prediction=float(local.predict(x_t[None, :])[0]),
        blackbox_prediction=float(distillation_targets(model, x_t[None, :])[0]),
        top_ids=top_weighted(kernel),
    )


def train_neighborhood_forest(aux_train: AuxiliaryDataset, config: ForestConfig | None = None) -> RandomForest:
    """Forest on the auxiliary targets that defines SILO and MAPLE neighborhoods."""
    config = config or ForestConfig(n_trees=100, min_leaf=10)
    return fit_random_forest(aux_train.features, aux_train.targets, "regression", config)


def leaf_coincidence(
    query_leaves: NDArray, leaves: NDArray, reference_leaves: NDArray | None = None
) -> NDArray[np.float64]:
    """
    (1/T) sum_t 1[leaf_t(row) == leaf_t(query)] / |{k : leaf_t(reference_k) == leaf_t(query)}|.

    leaves and reference_leaves are (rows, T); reference defaults to leaves.
    """
    reference_leaves = leaves if reference_leaves is None else reference_leaves
    match = leaves == query_leaves[None, :]
    counts = np.sum(reference_leaves == query_leaves[None, :], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_tree = np.where(counts > 0, match / counts, 0.0)
    return per_tree.mean(axis=1)


def silo_weights(
    x_t: NDArray, forest: RandomForest, train_features: NDArray, train_leaves: NDArray | None = None
) -> NeighborhoodWeights:
    x_t = np.asarray(x_t, dtype=np.float64).ravel()
    if train_leaves is None:
        train_leaves = forest.apply(as_matrix(train_features))
    weights = leaf_coincidence(forest.apply(x_t[None, :])[0], train_leaves)
    if not weights.any():
        logger.warning("query shares no leaf with any training instance; using uniform weights")
        weights = np.full(train_leaves.shape[0], 1.0 / train_leaves.shape[0])
    return NeighborhoodWeights(weights, "silo")


def _explanation(x_t, method, weights, local, model, instance_id) -> Explanation:
    bb = np.nan if model is None else float(distillation_targets(model, x_t[None, :])[0])
    return Explanation(
        instance_id=instance_id,
        method=method,
        features=x_t,
        weights=weights,
        local_model=local,
        local_prediction=float(local.predict(x_t[None, :])[0]),
        blackbox_prediction=bb,
        top_ids=top_weighted(weights),
    )


def silo_explain(
    x_t: NDArray,
    forest: RandomForest,
    aux_train: AuxiliaryDataset,
    local_kind: str = "ridge",
    alpha: float = DEFAULT_ALPHA,
    tree_depth: int = MAX_TREE_DEPTH,
    model: BlackBoxModel | None = None,
    train_leaves: NDArray | None = None,
    instance_id: int = 0,
) -> Explanation:
    x_t = np.asarray(x_t, dtype=np.float64).ravel()
    weights = silo_weights(x_t, forest, aux_train.features, train_leaves).weights
    local = fit_local(local_kind, aux_train.features, aux_train.targets, weights, alpha=alpha, max_depth=tree_depth)
    return _explanation(x_t, "silo", weights, local, model, instance_id)


def _embed(local: LocalModel, columns: NDArray, d: int) -> LocalModel:
    """Lift a surrogate fitted on a column subset back to all d features."""
    if local.kind == "ridge":
        coef = np.zeros(d)
        coef[columns] = local.coef
        return LocalModel(
            kind="ridge", n_features=d, coef=coef, intercept=local.intercept, alpha=local.alpha,
            weight_sum=local.weight_sum, n_selected=local.n_selected,
        )
    sub = local.tree
    tree = RegressionTree.from_dict(sub.to_dict())
    tree.feature = [LEAF if f == LEAF else int(columns[f]) for f in sub.feature]
    tree.n_features = d
    importances = np.zeros(d)
    importances[columns] = sub.importances
    tree.importances = importances
    return LocalModel(
        kind="shallow_tree", n_features=d, tree=tree, weight_sum=local.weight_sum, n_selected=local.n_selected
    )


def maple_explain(
    x_t: NDArray,
    forest: RandomForest,
    aux_train: AuxiliaryDataset,
    probe: AuxiliaryDataset,
    local_kind: str = "ridge",
    k_grid: list[int] | None = None,
    alpha: float = DEFAULT_ALPHA,
    tree_depth: int = MAX_TREE_DEPTH,
    model: BlackBoxModel | None = None,
    train_leaves: NDArray | None = None,
    probe_leaves: NDArray | None = None,
    instance_id: int = 0,
) -> Explanation:
    """
    SILO weights plus forward feature selection: features are ranked by forest importance,
    and the top-k subset with the lowest neighborhood-weighted error on the probe set wins
    (smallest k on ties). Dropped features get zero coefficients.
    """
    x_t = np.asarray(x_t, dtype=np.float64).ravel()
    d = x_t.size
    if train_leaves is None:
        train_leaves = forest.apply(aux_train.features)
    if probe_leaves is None:
        probe_leaves = forest.apply(probe.features)
    k_grid = sorted(set(k_grid or range(1, min(d, MAPLE_MAX_K) + 1)))
    if k_grid[0] < 1 or k_grid[-1] > d:
        raise InvalidInputError(f"invalid input: MAPLE k grid must lie in [1, {d}]")

    query_leaves = forest.apply(x_t[None, :])[0]
    weights = silo_weights(x_t, forest, aux_train.features, train_leaves).weights
    probe_weights = leaf_coincidence(query_leaves, probe_leaves, train_leaves)
    if not probe_weights.any():
        probe_weights = np.ones(probe.n_samples)
    ranking = np.argsort(-forest.importances, kind="stable")

    fits = []
    for k in k_grid:
        columns = np.sort(ranking[:k])
        local = fit_local(
            local_kind, aux_train.features[:, columns], aux_train.targets, weights,
            alpha=alpha, max_depth=tree_depth,
        )
        residual = np.abs(probe.targets - local.predict(probe.features[:, columns]))
        error = float(probe_weights @ residual / probe_weights.sum())
        fits.append((k, columns, local, error))
    best_error = min(error for *_, error in fits)
    k, columns, local, _ = next(f for f in fits if f[3] <= best_error + K_TOLERANCE)
    logger.debug("MAPLE picked k=%d for instance %d", k, instance_id)
    if k < d:
        local = _embed(local, columns, d)
    return _explanation(x_t, "maple", weights, local, model, instance_id)


@dataclass
class ForestNeighborhood:
    """A neighborhood forest with the leaf ids of the train and probe sets precomputed."""

    forest: RandomForest
    aux_train: AuxiliaryDataset
    probe: AuxiliaryDataset
    train_leaves: NDArray = field(init=False)
    probe_leaves: NDArray = field(init=False)

    def __post_init__(self):
        self.train_leaves = self.forest.apply(self.aux_train.features)
        self.probe_leaves = self.forest.apply(self.probe.features)

    def silo(self, x_t, local_kind, model=None, instance_id=0, **fit) -> Explanation:
        return silo_explain(
            x_t, self.forest, self.aux_train, local_kind, model=model,
            train_leaves=self.train_leaves, instance_id=instance_id, **fit,
        )

    def maple(self, x_t, local_kind, model=None, instance_id=0, k_grid=None, **fit) -> Explanation:
        return maple_explain(
            x_t, self.forest, self.aux_train, self.probe, local_kind, k_grid=k_grid, model=model,
            train_leaves=self.train_leaves, probe_leaves=self.probe_leaves, instance_id=instance_id, **fit,
        )
