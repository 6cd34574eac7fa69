"""Min-max scaling and chi-square feature ranking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..model import AptError
from .data import Dataset


@dataclass(frozen=True)
class MinMaxScaler:
    mins: np.ndarray
    spans: np.ndarray  # max - min; 0 marks a constant column

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "spans": self.spans.tolist()}

    @classmethod
    def from_dict(cls, d) -> "MinMaxScaler":
        return cls(np.asarray(d["mins"], dtype=float), np.asarray(d["spans"], dtype=float))


def fit_scaler(X) -> MinMaxScaler:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise AptError("EMPTY_DATASET", "cannot fit a scaler on zero rows")
    lo = X.min(axis=0)
    return MinMaxScaler(lo, X.max(axis=0) - lo)


def apply_scaler(scaler: MinMaxScaler, X) -> np.ndarray:
    """Affine map onto [0, 1] over the fitted range; values outside it are not clamped."""
    X = np.asarray(X, dtype=float)
    safe = np.where(scaler.spans > 0, scaler.spans, 1.0)
    out = (X - scaler.mins) / safe
    out[:, scaler.spans == 0] = 0.0
    return out


def chi2_scores(X, y) -> np.ndarray:
    """Per-feature chi-square statistic over class-conditional feature sums."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if (X < 0).any():
        raise AptError("NEGATIVE_FEATURE", "chi-square needs non-negative features")
    classes = np.unique(y)
    onehot = (y[:, None] == classes[None, :]).astype(float)
    observed = onehot.T @ X
    class_prob = onehot.mean(axis=0)
    expected = np.outer(class_prob, X.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def chi2_select(ds: Dataset, threshold: Optional[float] = None) -> list[int]:
    """Indices whose statistic reaches ``threshold`` (default: the median); never empty."""
    scores = chi2_scores(ds.X, ds.y)
    if threshold is None:
        threshold = float(np.median(scores))
    keep = [int(i) for i in np.flatnonzero(scores >= threshold)]
    return keep or [int(np.argmax(scores))]
