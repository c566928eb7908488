"""Confusion-matrix metrics with the tumor class as positive."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


def _pct(num: float, den: float) -> float:
    return 100.0 * num / den if den else 0.0


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_labels(cls, truth, pred) -> "EvalReport":
        truth = np.asarray(truth, dtype=bool)
        pred = np.asarray(pred, dtype=bool)
        if truth.shape != pred.shape:
            raise ValueError("truth and prediction differ in length")
        return cls(int((truth & pred).sum()), int((~truth & pred).sum()),
                   int((truth & ~pred).sum()), int((~truth & ~pred).sum()))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return _pct(self.tp + self.tn, self.total)

    @property
    def precision(self) -> float:
        return _pct(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _pct(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        """Equals the Dice index of the predicted and true positive sets."""
        return _pct(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    dice = f1

    @property
    def iou(self) -> float:
        return _pct(self.tp, self.tp + self.fp + self.fn)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(accuracy=self.accuracy, precision=self.precision, recall=self.recall,
                 f1=self.f1, dice=self.dice, iou=self.iou)
        return d

    def table(self) -> str:
        rows = [("TP", self.tp), ("FP", self.fp), ("FN", self.fn), ("TN", self.tn)]
        rows += [(k.capitalize(), f"{getattr(self, k):.2f}") for k in ("accuracy", "precision", "recall", "f1", "iou")]
        return "\n".join(f"{k:<10}{v:>10}" for k, v in rows)
