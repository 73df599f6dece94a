"""Confusion-matrix classification metrics (crack = positive class)."""

from dataclasses import dataclass

import numpy as np

__all__ = ["ConfusionMatrix", "ClassificationMetrics", "metrics_from_confusion"]


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(tp=int(np.sum(y_true & y_pred)), fp=int(np.sum(~y_true & y_pred)),
                   fn=int(np.sum(y_true & ~y_pred)), tn=int(np.sum(~y_true & ~y_pred)))

    def validate(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.total == 0:
            raise ValueError("empty confusion matrix")
        return self


@dataclass
class ClassificationMetrics:
    """accuracy/precision/recall/f1; None marks an undefined (0/0) metric."""
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None

    def to_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def metrics_from_confusion(cm: ConfusionMatrix) -> ClassificationMetrics:
    cm.validate()
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    if recall is not None and cm.tp == 0:
        f1 = 0.0
    elif precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return ClassificationMetrics(accuracy, precision, recall, f1)
