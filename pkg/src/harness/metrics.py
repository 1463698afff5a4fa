"""
@file metrics.py
@brief Accuracy, weighted F1, per-class scores and confusion matrices
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from errors import ContractViolation


@dataclass
class MetricsReport:
    """
    @brief Evaluation summary over one labelled set
    @details ``confusion`` rows are true classes, columns predictions; row sums
    equal ``support``.
    """
    accuracy: float
    weighted_f1: float
    per_class_f1: Dict[str, float]
    per_class_precision: Dict[str, float]
    per_class_recall: Dict[str, float]
    confusion: np.ndarray
    classes: List[str]

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def normalized_confusion(self) -> np.ndarray:
        """Row-normalized confusion matrix; rows without support stay zero."""
        support = self.support[:, None].astype(np.float64)
        return np.divide(self.confusion, support, out=np.zeros(self.confusion.shape), where=support > 0)

    def to_dict(self) -> Dict:
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "per_class_f1": self.per_class_f1,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "support": {name: int(count) for name, count in zip(self.classes, self.support)},
            "confusion": self.confusion.tolist(),
            "classes": list(self.classes),
        }


def compute_metrics(labels: Sequence[int], predictions: Sequence[int], classes: Sequence[str]) -> MetricsReport:
    """
    Score integer predictions against integer labels.

    F1_c is 2PR/(P+R); a zero denominator in P, R or F1 counts as 0. Weighted
    F1 averages F1_c with weights support_c / total.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ContractViolation(f"compute_metrics: labels {labels.shape} and predictions {predictions.shape} differ")
    if labels.size == 0:
        raise ContractViolation("compute_metrics: nothing to score")
    count = len(classes)
    for name, values in (("labels", labels), ("predictions", predictions)):
        if values.min() < 0 or values.max() >= count:
            raise ContractViolation(f"compute_metrics: {name} must lie in [0, {count})")

    indices = list(range(count))
    confusion = confusion_matrix(labels, predictions, labels=indices)
    precision, recall, f1, support = precision_recall_fscore_support(
        labels, predictions, labels=indices, average=None, zero_division=0)
    accuracy = float(np.trace(confusion)) / float(confusion.sum())
    weighted_f1 = float(np.dot(f1, support) / support.sum())
    return MetricsReport(
        accuracy=accuracy,
        weighted_f1=weighted_f1,
        per_class_f1={name: float(value) for name, value in zip(classes, f1)},
        per_class_precision={name: float(value) for name, value in zip(classes, precision)},
        per_class_recall={name: float(value) for name, value in zip(classes, recall)},
        confusion=confusion.astype(np.int64),
        classes=list(classes),
    )


def write_confusion_csv(path: Union[str, Path], report: MetricsReport, normalized: bool = False) -> Path:
    """Header row of predicted classes, then one row per true class."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = report.normalized_confusion() if normalized else report.confusion
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["true\\pred"] + report.classes)
        for name, row in zip(report.classes, matrix):
            writer.writerow([name] + [f"{value:.6f}" if normalized else int(value) for value in row])
    return path
