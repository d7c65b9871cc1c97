"""Experiment configuration: flat ``key = value`` files and their validation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ConfigError
from .protocols import FederatedConfig, Reduction

MODES = ("fedavg", "fedcollab", "pate-labels")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "fedcollab"
    workers: int = 10
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (128,)
    reduction: Reduction = Reduction.AVERAGE
    fractional_bits: int = 16
    gamma: float = 0.05
    train_limit: int | None = None
    test_limit: int | None = None
    public_limit: int | None = None
    data_dir: str | None = None
    metrics_path: str = "metrics.csv"
    labels_path: str = "labels.csv"
    message_log_path: str | None = None

    def federated(self) -> FederatedConfig:
        return FederatedConfig(
            workers=self.workers,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            hidden_sizes=self.hidden_sizes,
            reduction=self.reduction,
            fractional_bits=self.fractional_bits,
        )


def _int(lo: int, hi: int | None = None) -> Callable[[str], int]:
    def parse(text: str) -> int:
        v = int(text)
        if v < lo or (hi is not None and v > hi):
            raise ValueError(f"must be in [{lo}, {hi if hi is not None else 'inf'}]")
        return v

    return parse


def _optional_int(text: str) -> int | None:
    if text.lower() in ("", "none", "all"):
        return None
    return _int(1)(text)


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise ValueError("must be a positive finite number")
    return v


def _gamma(text: str) -> float:
    v = float(text)  # accepts "inf" for the noise-free mechanism
    if not v > 0:
        raise ValueError("must be positive (use inf to disable noise)")
    return v


def _mode(text: str) -> str:
    if text not in MODES:
        raise ValueError(f"must be one of {', '.join(MODES)}")
    return text


def _reduction(text: str) -> Reduction:
    try:
        return Reduction(text.lower())
    except ValueError:
        raise ValueError("must be 'sum' or 'average'") from None


def _sizes(text: str) -> tuple[int, ...]:
    sizes = tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError("must be a comma-separated list of positive widths")
    return sizes


def _path(text: str) -> str:
    if not text:
        raise ValueError("must not be empty")
    return text


def _optional_path(text: str) -> str | None:
    return None if text.lower() in ("", "none") else text


PARSERS: dict[str, Callable[[str], Any]] = {
    "mode": _mode,
    "workers": _int(1),
    "epochs": _int(0),
    "batch_size": _int(1),
    "learning_rate": _positive_float,
    "seed": _int(0, 2**64 - 1),
    "hidden_sizes": _sizes,
    "reduction": _reduction,
    "fractional_bits": _int(0, 62),
    "gamma": _gamma,
    "train_limit": _optional_int,
    "test_limit": _optional_int,
    "public_limit": _optional_int,
    "data_dir": _optional_path,
    "metrics_path": _path,
    "labels_path": _path,
    "message_log_path": _optional_path,
}


def parse_value(key: str, text: str, where: str) -> Any:
    if key not in PARSERS:
        raise ConfigError(f"unknown key '{key}' ({where})")
    try:
        return PARSERS[key](text.strip())
    except ValueError as e:
        raise ConfigError(f"invalid value {text.strip()!r} for '{key}' ({where}): {e}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Absent keys keep defaults."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        values[key] = parse_value(key, value, f"line {lineno}")
    return with_overrides(base or ExperimentConfig(), values)


def with_overrides(config: ExperimentConfig, values: dict[str, Any]) -> ExperimentConfig:
    unknown = set(values) - {f.name for f in dataclasses.fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}'")
    return dataclasses.replace(config, **values)

