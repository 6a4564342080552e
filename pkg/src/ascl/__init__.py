"""Asymmetry-sensitive contrastive image-text matching on precomputed features."""

from .config import ABLATIONS, TrainConfig, load_config
from .datastore import (ImageFeatures, PairedDataset, SynthConfig, TextFeatures, generate_synthetic,
                        load_dataset, load_features, save_features)
from .errors import (AsclError, ConfigError, DegenerateInputError, DegenerateVectorError, FormatError,
                     NumericError, PairingError, ShapeError, StateError)
from .evaluation import EvalReport, evaluate, recall_at_k
from .matcher import ModelParams, PairScore, score, score_matrix
from .modelio import load_model, save_model
from .training import TrainLog, train

__all__ = [
    "ABLATIONS", "TrainConfig", "load_config",
    "ImageFeatures", "TextFeatures", "PairedDataset", "SynthConfig", "generate_synthetic",
    "load_dataset", "load_features", "save_features",
    "AsclError", "ConfigError", "DegenerateInputError", "DegenerateVectorError", "FormatError",
    "NumericError", "PairingError", "ShapeError", "StateError",
    "EvalReport", "evaluate", "recall_at_k",
    "ModelParams", "PairScore", "score", "score_matrix",
    "load_model", "save_model", "TrainLog", "train",
]
