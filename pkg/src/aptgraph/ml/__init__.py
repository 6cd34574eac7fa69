"""Dependency-light learning toolkit used by the scan detectors."""

from .data import Dataset, train_test_split
from .evaluate import (
    ConfusionMatrix,
    RatePair,
    confusion_matrix,
    detection_rates,
    majority,
    precision_recall,
    smooth_predictions,
)
from .forest import Forest, fit_forest
from .pipeline import CvResult, TrainReport, format_metrics_csv, kfold_cv, stratified_folds, train_pipeline
from .preprocess import MinMaxScaler, apply_scaler, chi2_scores, chi2_select, fit_scaler
from .svm import LinearSvm, fit_linear_svm
from .trained import (
    ModelKind,
    TrainedModel,
    classify_with_mode,
    load_model,
    save_model,
    train_linear_svm,
    train_random_forest,
)

__all__ = [
    "ConfusionMatrix", "CvResult", "Dataset", "Forest", "LinearSvm", "MinMaxScaler", "ModelKind",
    "RatePair", "TrainReport", "TrainedModel", "apply_scaler", "chi2_scores", "chi2_select",
    "classify_with_mode", "confusion_matrix", "detection_rates", "fit_forest", "fit_linear_svm",
    "fit_scaler", "format_metrics_csv", "kfold_cv", "load_model", "majority", "precision_recall",
    "save_model", "smooth_predictions", "stratified_folds", "train_linear_svm", "train_pipeline",
    "train_random_forest", "train_test_split",
]
