"""Evaluation metrics for scored, labeled datasets.

ROC-AUC is the Mann-Whitney statistic with ties counted half (exactly the
area under the empirical ROC step function). Confusion-based rates use
the strict ``score > tau`` decision rule; cells with zero denominators
yield 0.0 and are listed in ``degenerate_fields``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .errors import ValidationError

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class MetricsReport:
    roc_auc: float
    precision_at_k: float
    fpr: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    log_loss: float
    degenerate_fields: tuple[str, ...] = field(default=())

    CSV_COLUMNS = (
        "f1_score", "accuracy", "precision", "recall", "mcc",
        "log_loss", "roc_auc", "precision_at_k", "fpr",
    )

    def csv_row(self) -> list[float]:
        return [
            self.f1, self.accuracy, self.precision, self.recall, self.mcc,
            self.log_loss, self.roc_auc, self.precision_at_k, self.fpr,
        ]

    def to_dict(self) -> dict:
        return {
            "roc_auc": self.roc_auc,
            "precision_at_k": self.precision_at_k,
            "fpr": self.fpr,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mcc": self.mcc,
            "log_loss": self.log_loss,
            "degenerate_fields": list(self.degenerate_fields),
        }


def _check_labels(labels: np.ndarray) -> None:
    if labels.size == 0:
        raise ValidationError("labels are empty")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValidationError("labels must be 0/1")


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + P(equal)/2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    _check_labels(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC-AUC undefined: both classes must be present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=float)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def precision_at_k(scores: Sequence[float], labels: Sequence[int], k: int) -> float:
    """Fraction of true frauds among the top-k scores; ties break by index."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    _check_labels(y)
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    if k > s.size:
        raise ValidationError(f"k={k} exceeds {s.size} scored items")
    top = np.argsort(-s, kind="stable")[:k]
    return float(y[top].sum()) / k


def confusion_counts(scores, labels, tau: float) -> tuple[int, int, int, int]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    _check_labels(y)
    pred = s > tau  # strict, matching the decision rule
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return tp, fp, fn, tn


def rates_from_counts(tp: int, fp: int, fn: int, tn: int) -> dict:
    degenerate: list[str] = []

    def ratio(num: float, den: float, name: str) -> float:
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    fpr = ratio(fp, fp + tn, "fpr")
    accuracy = ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    f1 = ratio(2.0 * precision * recall, precision + recall, "f1")
    mcc_den = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if mcc_den == 0:
        degenerate.append("mcc")
        mcc = 0.0
    else:
        mcc = (tp * tn - fp * fn) / mcc_den
    return {
        "precision": precision, "recall": recall, "fpr": fpr,
        "accuracy": accuracy, "f1": f1, "mcc": mcc,
        "degenerate_fields": tuple(degenerate),
    }


def log_loss(probabilities: Sequence[float], labels: Sequence[int]) -> float:
    """Mean negative log-likelihood; probabilities clipped to [1e-12, 1-1e-12]."""
    p = np.clip(np.asarray(probabilities, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(labels, dtype=int)
    _check_labels(y)
    if p.size != y.size:
        raise ValidationError("probabilities and labels differ in length")
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def evaluate(
    scores: Sequence[float],
    labels: Sequence[int],
    k: int,
    tau: float,
    probabilities: Sequence[float] | None = None,
) -> MetricsReport:
    """Full report; probabilities default to min-max squashed scores."""
    s = np.asarray(scores, dtype=float)
    if probabilities is None:
        span = s.max() - s.min()
        probabilities = (s - s.min()) / span if span > 0 else np.full_like(s, 0.5)
    rates = rates_from_counts(*confusion_counts(s, labels, tau))
    return MetricsReport(
        roc_auc=roc_auc(s, labels),
        precision_at_k=precision_at_k(s, labels, k),
        fpr=rates["fpr"],
        accuracy=rates["accuracy"],
        precision=rates["precision"],
        recall=rates["recall"],
        f1=rates["f1"],
        mcc=rates["mcc"],
        log_loss=log_loss(probabilities, labels),
        degenerate_fields=rates["degenerate_fields"],
    )


def write_report_json(f: IO[str], report: MetricsReport) -> None:
    json.dump(report.to_dict(), f, sort_keys=True, separators=(",", ":"))
    f.write("\n")


def write_report_csv(f: IO[str], report: MetricsReport) -> None:
    writer = csv.writer(f)
    writer.writerow(MetricsReport.CSV_COLUMNS)
    writer.writerow([repr(v) for v in report.csv_row()])
