"""LLFormer low-light image enhancement on a small numpy autodiff engine."""

from .degrade import DegradationParams, apply_degradation, sample_params
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    ImageFormatError,
    LLFormerError,
    ManifestError,
    NumericError,
)
from .estimator import LLFormerEnhancer, LowLightDegrader
from .metrics import mae, psnr, ssim
from .model import DESK_CONFIG, Model, ModelConfig, build, forward, param_count, predict
from .tensor import Tensor
from .trainer import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "DESK_CONFIG",
    "DegradationParams",
    "DimensionError",
    "ImageFormatError",
    "LLFormerEnhancer",
    "LLFormerError",
    "LowLightDegrader",
    "ManifestError",
    "Model",
    "ModelConfig",
    "NumericError",
    "Tensor",
    "TrainConfig",
    "apply_degradation",
    "build",
    "forward",
    "load_checkpoint",
    "mae",
    "param_count",
    "predict",
    "psnr",
    "sample_params",
    "save_checkpoint",
    "ssim",
    "train",
]
