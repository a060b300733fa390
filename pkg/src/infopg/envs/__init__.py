"""Desk-scale cooperative environments with per-agent rewards and communication graphs."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .base import TIME_PENALTY, CommGraph, Env, EnvConfig, StepResult
from .fraud import FraudWrapper, fraud_wrap
from .matrixclimb import ContinuousClimb, MatrixClimb, climb_matrix
from .pistonline import PistonLine
from .relaypong import RelayPong

ENVIRONMENTS = {
    "pistonline": PistonLine,
    "relaypong": RelayPong,
    "matrixclimb": MatrixClimb,
    "matrixclimb-continuous": ContinuousClimb,
}


def make_env(config: EnvConfig, fraud_rng: np.random.Generator | None = None) -> Env:
    """Build an environment from its config; ``fraud`` in params wraps it."""
    try:
        cls = ENVIRONMENTS[config.name]
    except KeyError:
        raise ConfigError(f"unknown environment {config.name!r}") from None
    kwargs = {k: v for k, v in config.params.items() if k not in ("fraud", "fraud_latents")}
    if config.max_cycles is not None:
        kwargs["max_cycles"] = config.max_cycles
    if config.n_agents is not None:
        if cls is PistonLine:
            kwargs["n_agents"] = config.n_agents
        elif config.n_agents != cls.n_agents:
            raise ConfigError(f"{config.name} has exactly {cls.n_agents} agents")
    try:
        env = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {config.name}: {exc}") from None
    fraud = config.params.get("fraud")
    if fraud is not None:
        env = fraud_wrap(env, int(fraud), fraud_rng if fraud_rng is not None else np.random.default_rng(config.seed))
    return env


__all__ = [
    "CommGraph",
    "ContinuousClimb",
    "ENVIRONMENTS",
    "Env",
    "EnvConfig",
    "FraudWrapper",
    "MatrixClimb",
    "PistonLine",
    "RelayPong",
    "StepResult",
    "TIME_PENALTY",
    "climb_matrix",
    "fraud_wrap",
    "make_env",
]
