"""Primal linear SVM: hinge loss plus L2 penalty, fitted by seeded stochastic subgradient steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import AptError


@dataclass(frozen=True)
class LinearSvm:
    weights: np.ndarray
    bias: float

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(int)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, d) -> "LinearSvm":
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]))


def fit_linear_svm(X, y, C: float = 1.0, epochs: int = 50, seed: int = 0) -> LinearSvm:
    """Minimise 0.5*|w|^2 + C * sum(hinge) with Pegasos-style steps.

    The bias rides along as an extra always-one input. The returned model is the
    average of the iterates over the second half of training, which damps the
    step-size noise of the plain last iterate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] < 2:
        raise AptError("TOO_FEW_ROWS", "need at least 2 samples")
    if np.unique(y).size < 2:
        raise AptError("SINGLE_CLASS", "training data holds one class only")
    if C <= 0 or epochs < 1:
        raise AptError("BAD_HYPERPARAMETER", "need C > 0 and epochs >= 1")
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    s = np.where(y == 1, 1.0, -1.0)
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    n_avg = 0
    t = 0
    total = epochs * n
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = s[i] * (Xa[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * s[i] * Xa[i]
            if 2 * t > total:
                avg += w
                n_avg += 1
    w = avg / max(n_avg, 1)
    return LinearSvm(w[:-1].copy(), float(w[-1]))
