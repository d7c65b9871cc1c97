"""Collaborative training by secret-shared loss aggregation, with a FedAvg baseline
and noisy teacher-ensemble labelling of public data."""

from .errors import (
    ConfigError,
    FedCollabError,
    FormatError,
    InputError,
    RangeError,
    ShapeError,
    UsageError,
)
from .nn_core import ModelParams, TrainingConfig
from .protocols import FederatedConfig, Mode, Reduction, run_training
from .secret_sharing import FixedPointCodec, ShareSet

__all__ = [
    "ConfigError",
    "FedCollabError",
    "FederatedConfig",
    "FixedPointCodec",
    "FormatError",
    "InputError",
    "Mode",
    "ModelParams",
    "RangeError",
    "Reduction",
    "ShapeError",
    "ShareSet",
    "TrainingConfig",
    "UsageError",
    "run_training",
]
