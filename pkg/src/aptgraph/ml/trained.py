"""Trained classifier bundle and its versioned JSON file format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from ..model import AptError
from .data import Dataset, canonical_order
from .evaluate import majority
from .forest import Forest, fit_forest
from .preprocess import MinMaxScaler, apply_scaler
from .svm import LinearSvm, fit_linear_svm

FORMAT_NAME = "aptgraph-model"
FORMAT_VERSION = 1


class ModelKind(str, enum.Enum):
    RANDOM_FOREST = "RANDOM_FOREST"
    LINEAR_SVM = "LINEAR_SVM"


@dataclass(frozen=True)
class TrainedModel:
    kind: ModelKind
    classifier: Union[Forest, LinearSvm]
    feature_names: tuple[str, ...]
    selected: tuple[int, ...]
    scaler: Optional[MinMaxScaler] = None
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    stage: Optional[str] = None

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_names):
            raise AptError(
                "BAD_FEATURE_WIDTH", f"model expects {len(self.feature_names)} features, got {X.shape[1]}"
            )
        if self.scaler is not None:
            X = apply_scaler(self.scaler, X)
        return X[:, list(self.selected)]

    def predict(self, X) -> np.ndarray:
        return self.classifier.predict(self.transform(X))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "kind": self.kind.value,
            "stage": self.stage,
            "feature_names": list(self.feature_names),
            "selected": list(self.selected),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "hyperparameters": dict(self.hyperparameters),
            "seed": self.seed,
            "classifier": self.classifier.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainedModel":
        if d.get("format") != FORMAT_NAME:
            raise AptError("BAD_MODEL_FILE", "not a model file")
        if d.get("version") != FORMAT_VERSION:
            raise AptError("BAD_MODEL_VERSION", f"unsupported model version {d.get('version')}")
        kind = ModelKind(d["kind"])
        clf = Forest.from_dict(d["classifier"]) if kind is ModelKind.RANDOM_FOREST else LinearSvm.from_dict(d["classifier"])
        return cls(
            kind=kind,
            classifier=clf,
            feature_names=tuple(d["feature_names"]),
            selected=tuple(int(i) for i in d["selected"]),
            scaler=None if d.get("scaler") is None else MinMaxScaler.from_dict(d["scaler"]),
            hyperparameters=dict(d.get("hyperparameters", {})),
            seed=int(d.get("seed", 0)),
            stage=d.get("stage"),
        )


def save_model(model: TrainedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise AptError("IO_ERROR", f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise AptError("BAD_MODEL_FILE", f"{path}: {exc}") from exc
    return TrainedModel.from_dict(raw)


RF_DEFAULTS = {"n_trees": 50, "max_depth": None, "min_leaf": 1}
SVM_DEFAULTS = {"C": 1.0, "epochs": 30}


def _canonical(D: Dataset):
    order = canonical_order(D.X, D.y)
    return D.X[order], D.y[order]


def train_random_forest(D: Dataset, hp: Optional[Mapping[str, Any]] = None, seed: Optional[int] = None) -> TrainedModel:
    """Fit a forest on ``D`` as given (no scaling or selection).

    Rows are put in a content-defined order first, so the fit depends on the
    seed and the set of rows but not on their order.
    """
    params = {**RF_DEFAULTS, **(hp or {})}
    seed = int(params.pop("seed", 0) if seed is None else seed)
    X, y = _canonical(D)
    forest = fit_forest(X, y, params["n_trees"], params["max_depth"], params["min_leaf"], seed)
    return TrainedModel(ModelKind.RANDOM_FOREST, forest, D.feature_names, tuple(range(D.X.shape[1])),
                        hyperparameters=params, seed=seed)


def train_linear_svm(D: Dataset, hp: Optional[Mapping[str, Any]] = None, seed: Optional[int] = None) -> TrainedModel:
    params = {**SVM_DEFAULTS, **(hp or {})}
    seed = int(params.pop("seed", 0) if seed is None else seed)
    X, y = _canonical(D)
    svm = fit_linear_svm(X, y, float(params["C"]), int(params["epochs"]), seed)
    return TrainedModel(ModelKind.LINEAR_SVM, svm, D.feature_names, tuple(range(D.X.shape[1])),
                        hyperparameters=params, seed=seed)


TRAINERS = {ModelKind.RANDOM_FOREST: train_random_forest, ModelKind.LINEAR_SVM: train_linear_svm}


def classify_with_mode(model: TrainedModel, windows: Sequence, n: int = 5) -> int:
    """Majority label over the model's predictions for the first ``n`` windows.

    ``windows`` holds feature vectors (objects with ``values``) or raw rows.
    """
    if n < 1 or n % 2 == 0:
        raise AptError("BAD_VOTE_COUNT", "n must be a positive odd number")
    if len(windows) == 0:
        raise AptError("EMPTY_INPUT", "no windows to classify")
    rows = [getattr(w, "values", w) for w in list(windows)[:n]]
    return majority(model.predict(np.asarray(rows, dtype=float)))
