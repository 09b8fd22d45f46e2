"""Rectangle-attention transformer for hyperspectral image denoising."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    InternalError,
    MetricUndefinedError,
    NumericError,
    ParameterError,
    SertError,
    UsageError,
)
from .model import ModelConfig, SertModel, flops_estimate, init_weights, param_count, toy_config

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "InternalError",
    "MetricUndefinedError",
    "ModelConfig",
    "NumericError",
    "ParameterError",
    "SertError",
    "SertModel",
    "UsageError",
    "__version__",
    "flops_estimate",
    "init_weights",
    "param_count",
    "toy_config",
]
