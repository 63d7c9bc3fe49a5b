"""Detection metrics against ground-truth contamination labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import UndefinedMetricError

METRIC_FIELDS = ("recall", "precision", "fpr", "f1", "auroc", "inlier_retention")


@dataclass
class MetricsReport:
    """Confusion counts and derived rates.

    ``recall`` (and so ``f1``) is ``None`` when the truth has no positives;
    ``fpr`` and ``inlier_retention`` are ``None`` when it has no negatives.
    """

    tp: int
    fp: int
    tn: int
    fn: int
    recall: float | None
    precision: float
    fpr: float | None
    f1: float | None
    inlier_retention: float | None
    auroc: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def score_labels(truth, y_hat) -> MetricsReport:
    truth = np.asarray(truth).astype(bool)
    y_hat = np.asarray(y_hat).astype(bool)
    if truth.shape != y_hat.shape:
        raise ValueError(f"length mismatch: truth {truth.shape} vs labels {y_hat.shape}")
    tp = int(np.sum(truth & y_hat))
    fp = int(np.sum(~truth & y_hat))
    tn = int(np.sum(~truth & ~y_hat))
    fn = int(np.sum(truth & ~y_hat))
    recall = _ratio(tp, tp + fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    if recall is None:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        recall=recall, precision=precision,
        fpr=_ratio(fp, fp + tn), f1=f1,
        inlier_retention=_ratio(tn, tn + fp),
    )


def auroc(truth, scores) -> float:
    """Mann-Whitney AUROC; ties between classes count one half."""
    truth = np.asarray(truth).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    if truth.shape != scores.shape:
        raise ValueError("truth and scores must have the same length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes in the truth labels")
    ranks = rankdata(scores, method="average")
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(truth, y_hat, scores=None) -> MetricsReport:
    """Label metrics plus AUROC when scores are given and both classes exist."""
    report = score_labels(truth, y_hat)
    if scores is not None:
        try:
            report.auroc = auroc(truth, scores)
        except UndefinedMetricError:
            report.auroc = None
    return report


def summarize(values) -> tuple[float | None, float | None]:
    """Mean and sample standard deviation, skipping missing values."""
    vals = np.array([v for v in values if v is not None and np.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return None, None
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return float(vals.mean()), std
