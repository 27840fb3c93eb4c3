"""Confusion matrices and accuracy reporting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import CLASS_NAMES


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    class_names: tuple = CLASS_NAMES

    @classmethod
    def from_predictions(cls, true, predicted, class_names=CLASS_NAMES) -> "ConfusionMatrix":
        true = np.asarray(true, dtype=int)
        predicted = np.asarray(predicted, dtype=int)
        if true.shape != predicted.shape:
            raise ValueError("true and predicted label lists differ in length")
        k = len(class_names)
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (true, predicted), 1)
        return cls(counts, tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def precision(self) -> np.ndarray:
        col = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), col, out=np.zeros(len(col)), where=col > 0)

    def recall(self) -> np.ndarray:
        row = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), row, out=np.zeros(len(row)), where=row > 0)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted"] + list(self.class_names))
            for name, row in zip(self.class_names, self.counts):
                w.writerow([name] + [int(v) for v in row])

    def write_per_class_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "support", "precision", "recall"])
            for name, support, p, r in zip(self.class_names, self.counts.sum(axis=1),
                                           self.precision(), self.recall()):
                w.writerow([name, int(support), repr(float(p)), repr(float(r))])


def format_percent(value: float) -> str:
    return f"{100.0 * value:.2f}%"
