"""Evaluation reports: overall, per-digit, per-scene and per-subject accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class MetricsReport:
    overall_accuracy: float
    n_samples: int
    class_labels: list[int]                      # subject ids, row/col order
    confusion_matrix: list[list[int]]            # rows: true, cols: predicted
    per_digit_accuracy: dict[int, float]
    per_scene_accuracy: dict[str, float]
    per_subject_accuracy: dict[int, float]
    mean_loss: Optional[float] = None
    loss_curves: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "n_samples": self.n_samples,
            "class_labels": self.class_labels,
            "confusion_matrix": self.confusion_matrix,
            "per_digit_accuracy": {str(k): v for k, v in self.per_digit_accuracy.items()},
            "per_scene_accuracy": self.per_scene_accuracy,
            "per_subject_accuracy": {str(k): v for k, v in self.per_subject_accuracy.items()},
            "mean_loss": self.mean_loss,
            "loss_curves": self.loss_curves,
        }


def build_report(
    true_subjects: Sequence[int],
    pred_subjects: Sequence[int],
    digits: Sequence[int],
    scenes: Sequence[str],
    class_labels: Sequence[int],
    mean_loss: Optional[float] = None,
) -> MetricsReport:
    true_arr = np.asarray(true_subjects)
    pred_arr = np.asarray(pred_subjects)
    if len(true_arr) == 0:
        raise ValueError("cannot build a report from zero samples")
    correct = true_arr == pred_arr

    label_index = {s: i for i, s in enumerate(class_labels)}
    confusion = np.zeros((len(class_labels), len(class_labels)), dtype=np.int64)
    for t, p in zip(true_arr, pred_arr):
        confusion[label_index[int(t)], label_index[int(p)]] += 1

    def group_accuracy(keys) -> dict:
        acc = {}
        for key in sorted(set(keys)):
            mask = np.asarray([k == key for k in keys])
            acc[key] = float(correct[mask].mean())
        return acc

    return MetricsReport(
        overall_accuracy=float(correct.mean()),
        n_samples=len(true_arr),
        class_labels=list(class_labels),
        confusion_matrix=confusion.tolist(),
        per_digit_accuracy=group_accuracy([int(d) for d in digits]),
        per_scene_accuracy=group_accuracy(list(scenes)),
        per_subject_accuracy=group_accuracy([int(s) for s in true_subjects]),
        mean_loss=mean_loss,
    )
