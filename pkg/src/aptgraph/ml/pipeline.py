"""Stratified k-fold model selection and the split/scale/select/fit/evaluate run."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ..model import AptError
from .data import Dataset, train_test_split
from .evaluate import ConfusionMatrix, confusion_matrix, precision_recall
from .preprocess import apply_scaler, chi2_scores, chi2_select, fit_scaler
from .trained import TRAINERS, ModelKind, TrainedModel


def stratified_folds(y, k: int, seed: int = 0) -> list[np.ndarray]:
    """Deal each class's shuffled rows round-robin into ``k`` folds."""
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(y):
        rows = rng.permutation(np.flatnonzero(y == cls))
        for j, r in enumerate(rows):
            folds[(offset + j) % k].append(int(r))
        offset += rows.size
    return [np.array(sorted(f), dtype=int) for f in folds]


@dataclass(frozen=True)
class CvResult:
    best_params: Mapping[str, Any]
    best_score: float
    scores: tuple[float, ...]  # mean validation accuracy per grid point


def kfold_cv(
    D: Dataset,
    k: int,
    grid: Sequence[Mapping[str, Any]],
    kind: ModelKind,
    seed: int = 0,
) -> CvResult:
    """Grid point with the best mean validation accuracy; ties go to the earlier point."""
    if k < 2 or len(D) < k:
        raise AptError("TOO_FEW_ROWS", f"{len(D)} rows cannot fill {k} folds")
    if not grid:
        raise AptError("EMPTY_GRID", "hyperparameter grid is empty")
    folds = stratified_folds(D.y, k, seed)
    trainer = TRAINERS[ModelKind(kind)]
    all_rows = np.arange(len(D))
    scores = []
    for point in grid:
        accs = []
        for fold in folds:
            if fold.size == 0:
                continue
            train = D.subset(np.setdiff1d(all_rows, fold))
            model = trainer(train, point, seed=seed)
            accs.append(float(np.mean(model.predict(D.X[fold]) == D.y[fold])))
        scores.append(float(np.mean(accs)))
    best = int(np.argmax(scores))
    return CvResult(dict(grid[best]), scores[best], tuple(scores))


DEFAULT_GRIDS: dict[ModelKind, tuple[dict, ...]] = {
    ModelKind.RANDOM_FOREST: (
        {"n_trees": 30, "max_depth": None, "min_leaf": 1},
        {"n_trees": 30, "max_depth": 6, "min_leaf": 2},
    ),
    ModelKind.LINEAR_SVM: (
        {"C": 1.0, "epochs": 20},
        {"C": 100.0, "epochs": 20},
    ),
}


@dataclass(frozen=True)
class TrainReport:
    dataset: str
    model: str
    precision: float
    recall: float
    degenerate: bool
    cv_accuracy: float
    best_params: Mapping[str, Any]
    selected_features: tuple[str, ...]
    chi2: tuple[float, ...]
    test: ConfusionMatrix

    CSV_FIELDS = ("dataset", "model", "PR", "RC", "cv_accuracy", "n_selected", "tp", "fp", "fn", "tn")

    def csv_row(self) -> list:
        t = self.test
        return [self.dataset, self.model, f"{self.precision:.6f}", f"{self.recall:.6f}",
                f"{self.cv_accuracy:.6f}", len(self.selected_features), t.tp, t.fp, t.fn, t.tn]


def format_metrics_csv(reports: Sequence[TrainReport], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(TrainReport.CSV_FIELDS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def train_pipeline(
    D: Dataset,
    kind: ModelKind,
    seed: int = 0,
    k: int = 10,
    grid: Optional[Sequence[Mapping[str, Any]]] = None,
    chi2_threshold: Optional[float] = None,
    dataset_name: str = "dataset",
    stage: Optional[str] = None,
) -> tuple[TrainedModel, TrainReport]:
    """80:20 split, min-max scale, chi-square select, k-fold CV on the training part, refit, test."""
    kind = ModelKind(kind)
    train, test = train_test_split(D, 0.2, seed)
    if np.unique(train.y).size < 2:
        raise AptError("SINGLE_CLASS", "training split holds one class only")
    scaler = fit_scaler(train.X)
    scaled = Dataset(apply_scaler(scaler, train.X), train.y, train.feature_names)
    stats = chi2_scores(scaled.X, scaled.y)
    selected = chi2_select(scaled, chi2_threshold)
    reduced = scaled.columns(selected)
    cv = kfold_cv(reduced, min(k, len(reduced)), grid or DEFAULT_GRIDS[kind], kind, seed)
    fitted = TRAINERS[kind](reduced, cv.best_params, seed=seed)
    model = TrainedModel(
        kind=kind,
        classifier=fitted.classifier,
        feature_names=D.feature_names,
        selected=tuple(selected),
        scaler=scaler,
        hyperparameters=dict(cv.best_params),
        seed=seed,
        stage=stage,
    )
    cm = confusion_matrix(test.y, model.predict(test.X))
    pr = precision_recall(cm)
    report = TrainReport(
        dataset=dataset_name,
        model=kind.value,
        precision=pr.first,
        recall=pr.second,
        degenerate=pr.degenerate,
        cv_accuracy=cv.best_score,
        best_params=dict(cv.best_params),
        selected_features=tuple(D.feature_names[i] for i in selected),
        chi2=tuple(float(s) for s in stats),
        test=cm,
    )
    return model, report
