"""Hybrid transformer/spiking network for particle-physics events, with a host-side
deployment-emulation toolkit (fixed-point quantization, MAC profiling, reports)."""

from .errors import (ConfigError, ContractError, HPCNError, NumericError, SchemaError,
                     ShapeError, UsageError)
from .model import HPCNeuroNetConfig, Model, build_baseline_mlp, build_model, forward
from .quant import FixedPointFormat, PrecisionConfig, quantize_model
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "HPCNError", "NumericError", "SchemaError", "ShapeError",
    "UsageError", "HPCNeuroNetConfig", "Model", "build_baseline_mlp", "build_model", "forward",
    "FixedPointFormat", "PrecisionConfig", "quantize_model", "TrainConfig", "evaluate", "train",
]
