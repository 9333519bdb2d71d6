"""Temporal-contrast representation learning for multivariate time series."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad
from .models import FeatureExtractorConfig, ModelBundle, load_checkpoint, save_checkpoint
from .sampling import SamplerConfig, label_rp, label_ts, sample_rp_dataset, sample_ts_dataset
from .synthetic import SyntheticConfig, generate_synthetic
from .training import TrainConfig, fit_autoencoder, fit_pretext, fit_supervised
from .windows import Recording, SleepStage, Window, WindowDataset, extract_windows, map_stages

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "FeatureExtractorConfig",
    "ModelBundle",
    "load_checkpoint",
    "save_checkpoint",
    "SamplerConfig",
    "label_rp",
    "label_ts",
    "sample_rp_dataset",
    "sample_ts_dataset",
    "SyntheticConfig",
    "generate_synthetic",
    "TrainConfig",
    "fit_autoencoder",
    "fit_pretext",
    "fit_supervised",
    "Recording",
    "SleepStage",
    "Window",
    "WindowDataset",
    "extract_windows",
    "map_stages",
]
