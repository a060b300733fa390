"""Decentralized multi-agent policy gradients with k-level communicative policies."""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    InfoPGError,
    NumericError,
    StaleGraphError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "InfoPGError",
    "NumericError",
    "StaleGraphError",
    "__version__",
]
