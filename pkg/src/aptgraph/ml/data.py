"""Labelled feature matrices and the seeded train/test split."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..features import FEATURE_NAMES, FeatureStage, FeatureVector
from ..model import AptError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray  # 0 = NORMAL, 1 = SCANNING
    feature_names: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2:
            raise AptError("BAD_SHAPE", "X must be a 2-D matrix")
        if X.shape[0] != y.shape[0]:
            raise AptError("BAD_SHAPE", f"{X.shape[0]} rows but {y.shape[0]} labels")
        if X.shape[1] != len(self.feature_names):
            raise AptError("BAD_SHAPE", f"{X.shape[1]} columns but {len(self.feature_names)} names")
        if y.size and not np.isin(y, (0, 1)).all():
            raise AptError("BAD_LABEL", "labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.feature_names)

    def columns(self, cols: Sequence[int]) -> "Dataset":
        cols = list(cols)
        return Dataset(self.X[:, cols], self.y, tuple(self.feature_names[c] for c in cols))

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], stage: FeatureStage) -> "Dataset":
        names = FEATURE_NAMES[stage]
        if any(v.label is None for v in vectors):
            raise AptError("UNLABELLED", "every training vector needs a label")
        X = np.array([v.values for v in vectors], dtype=float).reshape(len(vectors), len(names))
        y = np.array([int(v.label) for v in vectors], dtype=int)
        return cls(X, y, names)


def train_test_split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the last ``test_fraction`` of rows becomes the test set."""
    if not 0 < test_fraction < 1:
        raise AptError("BAD_SPLIT", "test_fraction must lie in (0, 1)")
    n = len(ds)
    if n < 2:
        raise AptError("TOO_FEW_ROWS", "need at least 2 rows to split")
    order = np.random.default_rng(seed).permutation(n)
    n_test = min(n - 1, max(1, int(round(n * test_fraction))))
    return ds.subset(order[: n - n_test]), ds.subset(order[n - n_test :])


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order that depends only on row contents, so fits ignore input order."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1]) if X.shape[1] else np.argsort(y, kind="stable")
