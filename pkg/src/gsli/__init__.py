"""Multi-scale graph structure learning for imputing spatial-temporal data."""

from .datamodel import NormStats, SpatioTemporalDataset, build_gaussian_adjacency, load_dataset, normalize
from .errors import GsliError
from .evaluation import ABLATIONS, ExperimentConfig, mae, rmse, run_experiment
from .masking import apply_mechanism, sample_training_mask
from .model import GsliModel, ModelConfig, TrainConfig, impute, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "ExperimentConfig",
    "GsliError",
    "GsliModel",
    "ModelConfig",
    "NormStats",
    "SpatioTemporalDataset",
    "TrainConfig",
    "apply_mechanism",
    "build_gaussian_adjacency",
    "impute",
    "load_checkpoint",
    "load_dataset",
    "mae",
    "normalize",
    "rmse",
    "run_experiment",
    "sample_training_mask",
    "save_checkpoint",
    "train",
]
