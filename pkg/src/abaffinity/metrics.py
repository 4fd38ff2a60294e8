"""Evaluation metrics: RMSE, MAE, R^2, Pearson, Spearman, ROC AUC.

All functions are pure and validated in the test suite against
independent brute-force oracles (two-pass correlation, rank-then-Pearson,
O(n^2) pairwise AUC). Reductions use math.fsum, whose correctly-rounded
result makes every metric exactly permutation invariant.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, UndefinedMetricError


def _pair(pred, target, min_n: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ContractError(f"metric inputs must be equal-length vectors, "
                            f"got {p.shape} and {t.shape}")
    if p.size < min_n:
        raise ContractError(f"metric needs at least {min_n} samples, got {p.size}")
    return p, t


def rmse(pred, target) -> float:
    p, t = _pair(pred, target, min_n=1)
    return math.sqrt(math.fsum((p - t) ** 2) / p.size)


def mae(pred, target) -> float:
    p, t = _pair(pred, target, min_n=1)
    return math.fsum(np.abs(p - t)) / p.size


def r2(pred, target) -> float:
    """Coefficient of determination, 1 - SSres/SStot about the target mean."""
    p, t = _pair(pred, target)
    mean_t = math.fsum(t) / t.size
    ss_tot = math.fsum((t - mean_t) ** 2)
    if ss_tot == 0.0:
        raise UndefinedMetricError("r2 undefined for a constant target")
    ss_res = math.fsum((t - p) ** 2)
    return 1.0 - ss_res / ss_tot


def pearson(x, y) -> float:
    a, b = _pair(x, y)
    ax = a - math.fsum(a) / a.size
    by = b - math.fsum(b) / b.size
    denom = math.sqrt(math.fsum(ax * ax)) * math.sqrt(math.fsum(by * by))
    if denom == 0.0:
        raise UndefinedMetricError("pearson undefined for constant input")
    return math.fsum(ax * by) / denom


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    a, b = _pair(x, y)
    try:
        return pearson(average_ranks(a), average_ranks(b))
    except UndefinedMetricError:
        raise UndefinedMetricError("spearman undefined for all-tied input") \
            from None


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError("roc_auc needs equal-length vectors")
    if not set(np.unique(y)) <= {0, 1}:
        raise ContractError("labels must be binary 0/1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined with a single class")
    ranks = average_ranks(s)
    rank_sum_pos = math.fsum(ranks[y == 1])
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def binarize_targets(pkds, policy: str = "median") -> Tuple[np.ndarray, float]:
    """Binder labels from pKd values.

    'median': label 1 iff pkd >= median of the evaluated values;
    'fixed:<t>': label 1 iff pkd >= t. Returns (labels, threshold).
    """
    values = np.asarray(pkds, dtype=np.float64)
    if values.size < 2:
        raise ContractError("binarize_targets needs at least 2 values")
    if policy == "median":
        threshold = float(np.median(values))
    elif policy.startswith("fixed:"):
        threshold = float(policy.split(":", 1)[1])
    else:
        raise ContractError(f"unknown AUC policy '{policy}'")
    labels = (values >= threshold).astype(np.int64)
    if labels.min() == labels.max():
        raise UndefinedMetricError(
            f"binarization at threshold {threshold} yields a single class")
    return labels, threshold


@dataclass
class EvalReport:
    """All reported metrics for one model on one split."""

    rmse: float
    mae: float
    r2: float
    pearson: float
    spearman: float
    auc: Optional[float]
    n: int
    auc_threshold: Optional[float]
    auc_policy: str
    scale: str  # "standardized" or "pkd"
    split: str = ""
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse, "mae": self.mae, "r2": self.r2,
            "pearson": self.pearson, "spearman": self.spearman,
            "auc": self.auc, "n": self.n,
            "auc_threshold": self.auc_threshold,
            "auc_policy": self.auc_policy, "scale": self.scale,
            "split": self.split, "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_report(pred_std: Sequence[float], target_std: Sequence[float],
                 target_pkd: Sequence[float], scaler, scale: str = "standardized",
                 auc_policy: str = "median", split: str = "") -> EvalReport:
    """Assemble the full report from standardized predictions.

    Error metrics are computed on the requested scale; correlations and
    AUC are scale-invariant. Binarization uses the raw pKd targets, with
    predictions as ranking scores.
    """
    if scale not in ("standardized", "pkd"):
        raise ContractError(f"unknown metric scale '{scale}'")
    pred_std = np.asarray(pred_std, dtype=np.float64)
    target_std = np.asarray(target_std, dtype=np.float64)
    target_pkd = np.asarray(target_pkd, dtype=np.float64)
    if scale == "pkd":
        pred_m, target_m = scaler.invert(pred_std), np.asarray(target_pkd)
    else:
        pred_m, target_m = pred_std, target_std

    warnings = []
    auc: Optional[float] = None
    threshold: Optional[float] = None
    try:
        labels, threshold = binarize_targets(target_pkd, auc_policy)
        auc = roc_auc(pred_std, labels)
    except (UndefinedMetricError, ContractError) as exc:
        # single-class or too-small splits: report auc as null, keep going
        warnings.append(f"auc unavailable: {exc}")

    return EvalReport(
        rmse=rmse(pred_m, target_m),
        mae=mae(pred_m, target_m),
        r2=r2(pred_m, target_m),
        pearson=pearson(pred_std, target_std),
        spearman=spearman(pred_std, target_std),
        auc=auc,
        n=int(pred_std.size),
        auc_threshold=threshold,
        auc_policy=auc_policy,
        scale=scale,
        split=split,
        warnings=tuple(warnings),
    )
