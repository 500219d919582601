"""Prediction, fidelity and coefficient-recovery metrics, with distance-decile aggregation."""

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy import stats

from local_surrogates.errors import InvalidInputError, UndefinedMetricError

logger = logging.getLogger(__name__)

AWD_NORMS = ("mean_abs", "l1", "l2")
DEFAULT_BUCKETS = 10
DEFAULT_CONFIDENCE = 0.95


def _pair(a: NDArray, b: NDArray, names: tuple[str, str]) -> tuple[NDArray, NDArray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"invalid input: {names[0]} has {a.size} entries, {names[1]} has {b.size}")
    if a.size == 0:
        raise InvalidInputError(f"invalid input: {names[0]} is empty")
    return a, b


def mae(pred: NDArray, truth: NDArray) -> float:
    pred, truth = _pair(pred, truth, ("pred", "truth"))
    return float(np.mean(np.abs(pred - truth)))


def lmae(local_preds: NDArray, blackbox_preds: NDArray) -> float:
    """Fidelity: mean |surrogate - black box|, in logit space for classifiers."""
    local_preds, blackbox_preds = _pair(local_preds, blackbox_preds, ("local_preds", "blackbox_preds"))
    return float(np.mean(np.abs(local_preds - blackbox_preds)))


def r2_score(blackbox_preds: NDArray, local_preds: NDArray) -> float:
    """R² of the surrogate against the black-box outputs (not the labels)."""
    f, g = _pair(blackbox_preds, local_preds, ("blackbox_preds", "local_preds"))
    residual = f - g
    centered = f - f.mean()
    denominator = float(centered @ centered)
    if denominator == 0:
        raise UndefinedMetricError("undefined R²: black-box predictions have zero variance")
    return 1.0 - float(residual @ residual) / denominator


def apr(scores: NDArray, labels: NDArray) -> float:
    """Average precision; ties ordered by descending score, then ascending index."""
    scores, labels = _pair(scores, labels, ("scores", "labels"))
    positives = labels > 0.5
    if not positives.any():
        raise UndefinedMetricError("undefined APR: no positive labels")
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = positives[order]
    precision_at = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision_at[hits].mean())


def awd(true_w: NDArray, est_w: NDArray, norm: str = "mean_abs") -> float | NDArray[np.float64]:
    """
    Coefficient distance, intercept excluded. Rows of 2-D inputs are compared pairwise.

    ``mean_abs`` averages |w - w_hat| over the d coefficients, ``l1`` sums them and
    ``l2`` is the Euclidean norm.
    """
    true_w = np.asarray(true_w, dtype=np.float64)
    est_w = np.asarray(est_w, dtype=np.float64)
    if true_w.shape != est_w.shape:
        raise InvalidInputError(f"invalid input: coefficient shapes {true_w.shape} and {est_w.shape} differ")
    diff = np.abs(true_w - est_w)
    if norm == "mean_abs":
        result = diff.mean(axis=-1)
    elif norm == "l1":
        result = diff.sum(axis=-1)
    elif norm == "l2":
        result = np.sqrt((diff * diff).sum(axis=-1))
    else:
        raise InvalidInputError(f"unknown AWD norm '{norm}', expected one of {AWD_NORMS}")
    return float(result) if np.ndim(result) == 0 else result


def distance_buckets(distance: NDArray, n_buckets: int = DEFAULT_BUCKETS) -> NDArray[np.int64]:
    """Percentile band (0 = closest to the boundary) of every |boundary statistic|."""
    distance = np.abs(np.asarray(distance, dtype=np.float64).ravel())
    edges = np.quantile(distance, np.linspace(0.0, 1.0, n_buckets + 1)[1:-1])
    return np.searchsorted(edges, distance, side="left")


def bucket_means(distance: NDArray, values: NDArray, n_buckets: int = DEFAULT_BUCKETS) -> NDArray[np.float64]:
    """Mean of values per distance band; NaN marks an empty band."""
    buckets = distance_buckets(distance, n_buckets)
    values = np.asarray(values, dtype=np.float64).ravel()
    sums = np.bincount(buckets, weights=values, minlength=n_buckets)
    counts = np.bincount(buckets, minlength=n_buckets)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)


def t_interval(samples: NDArray, confidence: float = DEFAULT_CONFIDENCE) -> tuple[float, float, float]:
    """(mean, low, high) Student-t interval; collapses to the mean for one sample or zero spread."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise InvalidInputError("invalid input: no samples for a confidence interval")
    if np.all(samples == samples[0]):
        value = float(samples[0])
        return value, value, value
    mean = float(samples.mean())
    sem = float(samples.std(ddof=1)) / np.sqrt(samples.size)
    half = float(stats.t.ppf((1.0 + confidence) / 2.0, samples.size - 1)) * sem
    return mean, mean - half, mean + half


def decile_bucket_awd(
    runs: Sequence[tuple[NDArray, NDArray]],
    n_buckets: int = DEFAULT_BUCKETS,
    confidence: float = DEFAULT_CONFIDENCE,
    method: str = "",
) -> pd.DataFrame:
    """
    Per-band mean AWD with a t-interval over independent runs.

    Every run contributes (boundary distance per test point, AWD per test point); a band
    that is empty in every run is kept as a row flagged ``empty``.
    """
    if not runs:
        raise InvalidInputError("invalid input: no runs to aggregate")
    per_run = np.vstack([bucket_means(distance, values, n_buckets) for distance, values in runs])
    rows = []
    for bucket in range(n_buckets):
        column = per_run[:, bucket]
        column = column[~np.isnan(column)]
        if column.size == 0:
            rows.append({"decile": bucket + 1, "mean_awd": np.nan, "ci_low": np.nan, "ci_high": np.nan,
                         "n_runs": 0, "empty": True})
            continue
        mean, low, high = t_interval(column, confidence)
        rows.append({"decile": bucket + 1, "mean_awd": mean, "ci_low": low, "ci_high": high,
                     "n_runs": int(column.size), "empty": False})
    frame = pd.DataFrame(rows)
    if method:
        frame.insert(0, "method", method)
    empty = int(frame["empty"].sum())
    if empty:
        logger.warning("%d of %d distance bands have no test points", empty, n_buckets)
    return frame


@dataclass
class MetricsReport:
    method: str
    dataset: str
    blackbox_kind: str
    local_kind: str
    task: str
    n_instances: int
    lmae: float
    r2: float | None
    mae: float | None = None
    apr: float | None = None
    awd: float | None = None
    awd_norm: str | None = None
    awd_deciles: list[float] | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        report = asdict(self)
        if self.awd_deciles is not None:
            report["awd_deciles"] = [None if np.isnan(v) else v for v in self.awd_deciles]
        return report


def evaluate_explanations(
    method: str,
    explanations: Sequence,
    labels: NDArray,
    task: str,
    dataset: str = "",
    blackbox_kind: str = "",
    local_kind: str = "",
    seed: int = 0,
    true_coefficients: NDArray | None = None,
    distances: NDArray | None = None,
    awd_norm: str = "mean_abs",
) -> MetricsReport:
    """Score a list of Explanation records (any method) on one test split."""
    if not explanations:
        raise InvalidInputError("invalid input: no explanations to evaluate")
    local = np.array([e.local_prediction for e in explanations])
    target = np.array([e.blackbox_prediction for e in explanations])
    try:
        r2 = r2_score(target, local)
    except UndefinedMetricError as ex:
        logger.warning("%s: %s", method, ex)
        r2 = None
    report = MetricsReport(
        method=method,
        dataset=dataset,
        blackbox_kind=blackbox_kind,
        local_kind=local_kind,
        task=task,
        n_instances=len(explanations),
        lmae=lmae(local, target),
        r2=r2,
        seed=seed,
    )
    if task == "classification":
        # surrogates predict logits; APR only needs their ranking
        report.apr = apr(local, labels)
    else:
        report.mae = mae(local, labels)
    if true_coefficients is not None:
        estimated = np.vstack([e.coefficients for e in explanations])
        per_point = awd(true_coefficients, estimated, norm=awd_norm)
        report.awd = float(np.mean(per_point))
        report.awd_norm = awd_norm
        if distances is not None:
            report.awd_deciles = bucket_means(distances, per_point).tolist()
    return report
