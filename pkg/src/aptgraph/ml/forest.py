"""CART trees (Gini) and a bootstrap random forest over them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..model import AptError


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; a leaf has feature == -1 and carries P(class 1) in ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )

    def structure_equal(self, other: "Tree") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "value")
        )


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray, min_leaf: int):
    """Lowest weighted Gini split over ``features``: (feature, threshold, gain) or None."""
    n = y.size
    total_pos = y.sum()
    parent = 1.0 - (total_pos / n) ** 2 - (1 - total_pos / n) ** 2
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        pos_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        # Only cut between distinct values, respecting the leaf-size floor.
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        p_l = pos_left / n_left
        p_r = (total_pos - pos_left) / n_right
        gini_l = 1.0 - p_l**2 - (1 - p_l) ** 2
        gini_r = 1.0 - p_r**2 - (1 - p_r) ** 2
        weighted = (n_left * gini_l + n_right * gini_r) / n
        weighted = np.where(valid, weighted, np.inf)
        i = int(np.argmin(weighted))
        gain = parent - weighted[i]
        if gain > 1e-12 and (best is None or gain > best[2]):
            best = (int(f), float((xs[i] + xs[i + 1]) / 2.0), float(gain))
    return best


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_features: Optional[int] = None,
    max_depth: Optional[int] = None,
    min_leaf: int = 1,
) -> Tree:
    d = X.shape[1]
    k = d if max_features is None else max(1, min(d, max_features))
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        value[node] = float(ys.mean()) if rows.size else 0.0
        if rows.size < 2 * min_leaf or ys.min() == ys.max() or (max_depth is not None and depth >= max_depth):
            continue
        feats = np.sort(rng.choice(d, size=k, replace=False))
        split = _best_split(X[rows], ys, feats, min_leaf)
        if split is None:
            continue
        f, thr, _ = split
        mask = X[rows, f] <= thr
        l, r = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, l, r
        stack.append((r, rows[~mask], depth + 1))
        stack.append((l, rows[mask], depth + 1))

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "Forest":
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]))


def fit_forest(
    X,
    y,
    n_trees: int = 50,
    max_depth: Optional[int] = None,
    min_leaf: int = 1,
    seed: int = 0,
) -> Forest:
    """Bootstrap-aggregated CART trees with sqrt(d) candidate features per split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] < 2:
        raise AptError("TOO_FEW_ROWS", "need at least 2 samples")
    if np.unique(y).size < 2:
        raise AptError("SINGLE_CLASS", "training data holds one class only")
    if n_trees < 1:
        raise AptError("BAD_HYPERPARAMETER", "n_trees must be >= 1")
    n, d = X.shape
    max_features = max(1, int(math.isqrt(d)))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        trees.append(fit_tree(X[boot], y[boot], rng, max_features, max_depth, min_leaf))
    return Forest(tuple(trees))
