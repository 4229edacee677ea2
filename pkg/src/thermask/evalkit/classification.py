"""Confusion matrices and per-class precision / recall / F1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from thermask.dataset import MaskClass

CLASSES = tuple(MaskClass)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class ClassificationReport:
    confusion: np.ndarray  # rows = true class, cols = predicted class
    precision: dict[MaskClass, float]
    recall: dict[MaskClass, float]
    f1: dict[MaskClass, float]
    accuracy: float

    kind = "classification"

    def metrics(self) -> dict[str, float]:
        out = {"accuracy": self.accuracy}
        for c in CLASSES:
            out[f"{c.name}.p"] = self.precision[c]
            out[f"{c.name}.r"] = self.recall[c]
            out[f"{c.name}.f1"] = self.f1[c]
        return out

    def to_dict(self) -> dict:
        return {
            "schema": "v1",
            "kind": self.kind,
            "classes": [c.name for c in CLASSES],
            "confusion": self.confusion.tolist(),
            "per_class": {
                c.name: {"p": self.precision[c], "r": self.recall[c], "f1": self.f1[c]} for c in CLASSES
            },
            "accuracy": self.accuracy,
        }


def _safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def classification_report(true_labels: Sequence, predicted_labels: Sequence) -> ClassificationReport:
    """Confusion counts and per-class metrics; 0/0 ratios are reported as 0."""
    if len(true_labels) != len(predicted_labels):
        raise ValueError(f"length mismatch: {len(true_labels)} true vs {len(predicted_labels)} predicted")
    if len(true_labels) == 0:
        raise ValueError("empty label sequences")
    y_true = np.array([int(MaskClass(t)) for t in true_labels])
    y_pred = np.array([int(MaskClass(p)) for p in predicted_labels])
    k = len(CLASSES)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    precision, recall, f1 = {}, {}, {}
    for c in CLASSES:
        tp = confusion[c, c]
        precision[c] = _safe_div(tp, confusion[:, c].sum())
        recall[c] = _safe_div(tp, confusion[c, :].sum())
        f1[c] = f1_score(precision[c], recall[c])
    accuracy = _safe_div(np.trace(confusion), confusion.sum())
    return ClassificationReport(confusion, precision, recall, f1, accuracy)
