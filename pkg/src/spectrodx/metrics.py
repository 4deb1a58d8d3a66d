"""Confusion-matrix metrics and ROC/AUC with schizophrenia (sch) as the positive class."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Undefined:
    """Marker for a metric whose denominator is zero."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False


UNDEFINED = Undefined()


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> ConfusionCounts:
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


@dataclass
class MetricsReport:
    accuracy: float | Undefined
    sensitivity: float | Undefined
    specificity: float | Undefined
    f1: float | Undefined
    roc: list[tuple[float, float, float]] = field(default_factory=list)
    auc: float | None = None

    def to_dict(self) -> dict:
        def enc(v):
            return None if v is UNDEFINED else v

        return {
            "accuracy": enc(self.accuracy),
            "sensitivity": enc(self.sensitivity),
            "specificity": enc(self.specificity),
            "f1": enc(self.f1),
            "auc": self.auc,
            "undefined": [k for k in ("accuracy", "sensitivity", "specificity", "f1")
                          if getattr(self, k) is UNDEFINED],
        }


def _ratio(num: float, den: float):
    return UNDEFINED if den == 0 else num / den


def confusion_metrics(c: ConfusionCounts) -> MetricsReport:
    return MetricsReport(
        accuracy=_ratio(c.tp + c.tn, c.total),
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
        f1=_ratio(c.tp, c.tp + 0.5 * (c.fp + c.fn)),
    )


def roc_auc(scores, truth) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points (fpr, tpr, threshold) swept over unique scores, and trapezoidal AUC.

    Equal scores form one threshold step, so ties contribute a diagonal segment.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be matching 1-d arrays")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    roc = [(float(f), float(t), float(th)) for f, t, th in zip(fpr, tpr, thresholds)]
    return roc, auc


def evaluate_scores(scores, truth, threshold: float = 0.5) -> MetricsReport:
    """Full report from positive-class probabilities."""
    truth = np.asarray(truth).astype(int)
    counts = ConfusionCounts.from_predictions(truth, np.asarray(scores) >= threshold)
    report = confusion_metrics(counts)
    report.roc, report.auc = roc_auc(scores, truth)
    return report


def write_roc_csv(roc, path):
    with open(path, "w") as fh:
        fh.write("fpr,tpr,threshold\n")
        for f, t, th in roc:
            fh.write(f"{f!r},{t!r},{th!r}\n")
