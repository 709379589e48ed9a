"""One-class fall detection with autoencoders trained on normal activity only."""

from .errors import (
    ConfigError,
    IngestionError,
    InputError,
    SelectionError,
    UndefinedMetricError,
    UnseenFallError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "IngestionError",
    "InputError",
    "SelectionError",
    "UndefinedMetricError",
    "UnseenFallError",
]
