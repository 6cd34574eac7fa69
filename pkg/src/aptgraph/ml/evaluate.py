"""Confusion counts, precision/recall, detection rates and window-level mode voting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    if t.shape != p.shape:
        raise ValueError("label vectors differ in length")
    return ConfusionMatrix(
        tp=int(np.sum((t == 1) & (p == 1))),
        fp=int(np.sum((t == 0) & (p == 1))),
        fn=int(np.sum((t == 1) & (p == 0))),
        tn=int(np.sum((t == 0) & (p == 0))),
    )


@dataclass(frozen=True)
class RatePair:
    """Two ratios; iterates as the pair. ``degenerate`` marks a zero denominator."""

    first: float
    second: float
    degenerate: bool = False

    def __iter__(self) -> Iterator[float]:
        yield self.first
        yield self.second


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def precision_recall(cm: ConfusionMatrix) -> RatePair:
    pr, d1 = _ratio(cm.tp, cm.tp + cm.fp)
    rc, d2 = _ratio(cm.tp, cm.tp + cm.fn)
    return RatePair(pr, rc, d1 or d2)


def detection_rates(cm: ConfusionMatrix) -> RatePair:
    """(DR, MDR) over the positive windows. No positives: both 0, flagged degenerate."""
    dr, degenerate = _ratio(cm.tp, cm.tp + cm.fn)
    mdr, _ = _ratio(cm.fn, cm.tp + cm.fn)
    return RatePair(dr, mdr, degenerate)


def majority(labels: Sequence[int]) -> int:
    """1 when strictly more than half the votes are 1; ties fall to 0."""
    votes = np.asarray(labels, dtype=int)
    return int(2 * votes.sum() > votes.size)


def smooth_predictions(preds: Sequence[int], n: int = 5) -> np.ndarray:
    """Centred mode filter of width ``n``; the window is clipped at both ends."""
    p = np.asarray(preds, dtype=int)
    h = n // 2
    return np.array([majority(p[max(0, i - h) : i + h + 1]) for i in range(p.size)], dtype=int)
