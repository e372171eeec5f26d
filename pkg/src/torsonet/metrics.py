"""Confusion matrices and the per-class precision / recall / F1 report."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DatasetError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[true][predicted]
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.shape != (k, k):
            raise ArgumentError(f"confusion counts must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ArgumentError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = [str(i) for i in range(k)]
        if len(self.class_names) != k:
            raise ArgumentError(f"{len(self.class_names)} class names for {k} classes")

    @classmethod
    def empty(cls, num_classes, class_names=None):
        return cls(np.zeros((num_classes, num_classes), np.int64), list(class_names or []))

    @classmethod
    def from_predictions(cls, labels, predicted, num_classes, class_names=None):
        cm = cls.empty(num_classes, class_names)
        cm.add(labels, predicted)
        return cm

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def add(self, labels, predicted):
        labels = np.asarray(labels, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        k = self.num_classes
        if np.any((labels < 0) | (labels >= k)):
            raise DatasetError(f"label out of range for {k} classes")
        if np.any((predicted < 0) | (predicted >= k)):
            raise ArgumentError(f"prediction out of range for {k} classes")
        np.add.at(self.counts, (labels, predicted), 1)


@dataclass
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_f1: float
    class_names: list
    support: np.ndarray

    def records(self):
        """One dict per class, then an ``overall`` record."""
        out = [{"class": name, "precision": float(p), "recall": float(r), "f1": float(f),
                "support": int(s)}
               for name, p, r, f, s in zip(self.class_names, self.precision, self.recall,
                                           self.f1, self.support)]
        out.append({"class": "overall", "accuracy": self.accuracy, "macro_f1": self.macro_f1,
                    "support": int(self.support.sum())})
        return out

    def to_jsonl(self):
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def format_table(self, digits=2):
        """Rows grouped by metric, one row per class, then accuracy."""
        width = max(len(n) for n in self.class_names)
        lines = []
        for title, values in (("Precision", self.precision), ("Recall", self.recall),
                              ("F1-score", self.f1)):
            for name, v in zip(self.class_names, values):
                lines.append(f"{title:<10}{name:<{width + 2}}{v:.{digits}f}")
        lines.append(f"{'Accuracy':<10}{'':<{width + 2}}{self.accuracy:.{digits}f}")
        lines.append(f"{'Macro F1':<10}{'':<{width + 2}}{self.macro_f1:.{digits}f}")
        return "\n".join(lines)


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total <= 0:
        raise ArgumentError("confusion matrix is empty")
    counts = cm.counts
    tp = np.diag(counts)
    precision = _safe_ratio(tp, counts.sum(axis=0))
    recall = _safe_ratio(tp, counts.sum(axis=1))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(tp.sum() / counts.sum()),
        macro_f1=float(f1.mean()),
        class_names=list(cm.class_names),
        support=counts.sum(axis=1),
    )


def predict_labels(probs):
    """Argmax over classes; ``np.argmax`` already resolves ties to the lowest index."""
    return np.argmax(probs, axis=-1)


def evaluate(model, dataset, batch_size=16):
    """Run inference over ``dataset`` and return ``(ConfusionMatrix, MetricsReport)``.

    ``dataset`` is anything :func:`torsonet.train.iter_batches` accepts.
    """
    from .graph import forward
    from .train import dataset_size, iter_batches, class_names_of

    if dataset_size(dataset) == 0:
        raise ArgumentError("cannot evaluate an empty dataset")
    cm = ConfusionMatrix.empty(model.num_classes, class_names_of(dataset, model.num_classes))
    for images, labels in iter_batches(dataset, batch_size, shuffle=False):
        probs, _ = forward(model, images)
        cm.add(labels, predict_labels(probs))
    return cm, metrics_from_confusion(cm)
