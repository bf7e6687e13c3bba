"""From-scratch supervised models for risk-tier classification and sequences."""

from .data import (
    Dataset,
    EmptyStratum,
    LengthMismatch,
    cross_validate,
    metrics,
    split,
)
from .forest import ForestModel, train_forest
from .svm import NotStandardized, SvmModel, train_svm
from .lstm import LstmCell, gradient_check, lstm_step, lstm_train

__all__ = [
    "Dataset", "EmptyStratum", "LengthMismatch", "split", "cross_validate",
    "metrics", "ForestModel", "train_forest", "SvmModel", "train_svm",
    "NotStandardized", "LstmCell", "lstm_step", "lstm_train", "gradient_check",
]
