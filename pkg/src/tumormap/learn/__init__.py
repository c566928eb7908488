"""Patch classifiers (k-NN, RBF SVM, random forest) and their metrics."""
from .metrics import EvalReport
from .models import (NOT_TUMOR, TUMOR, Dataset, ModelFormatError, TrainedModel, evaluate, grid_search,
                     load_model, predict, save_model, train)

__all__ = ["EvalReport", "Dataset", "TrainedModel", "ModelFormatError", "TUMOR", "NOT_TUMOR",
           "train", "predict", "evaluate", "grid_search", "save_model", "load_model"]
