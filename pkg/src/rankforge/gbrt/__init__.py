"""Histogram gradient-boosted regression trees for listwise ranking."""

from .binning import apply_bins, bin_features, fit_bin_edges
from .boosting import (
    OBJECTIVES,
    PRESETS,
    Ensemble,
    IterationRecord,
    TrainConfig,
    TrainingLog,
    predict,
    train,
)
from .estimator import GBRTRanker
from .model_io import FORMAT_VERSION, dumps_model, load_model, loads_model, save_model
from .tree import RegressionTree, fit_tree

__all__ = [
    "OBJECTIVES", "PRESETS", "TrainConfig", "Ensemble", "IterationRecord", "TrainingLog",
    "train", "predict", "GBRTRanker", "RegressionTree", "fit_tree", "bin_features",
    "fit_bin_edges", "apply_bins", "FORMAT_VERSION", "dumps_model", "loads_model",
    "save_model", "load_model",
]
