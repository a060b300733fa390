"""Byzantine wrapper: one agent's submitted actions are replaced by uniform noise."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .base import CommGraph, Env, StepResult


class FraudWrapper(Env):
    """Wraps a discrete environment so that agent ``fraud_index`` acts uniformly at random.

    The wrapped agent keeps its place in the communication graph; trainers
    must exclude it from every update (see ``fraud_index``).
    """

    def __init__(self, env: Env, fraud_index: int, rng: np.random.Generator):
        if env.continuous:
            raise ContractError("fraud wrapping needs a discrete action space")
        if not 0 <= fraud_index < env.n_agents:
            raise ContractError(f"fraud index {fraud_index} outside [0, {env.n_agents})")
        self.env = env
        self.fraud_index = fraud_index
        self.rng = rng
        self.name = env.name
        self.n_agents = env.n_agents
        self.obs_dim = env.obs_dim
        self.n_actions = env.n_actions
        self.max_cycles = env.max_cycles
        self.last_executed: np.ndarray | None = None

    def __getattr__(self, item):
        return getattr(self.env, item)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.env.reset(rng)

    def step(self, actions) -> StepResult:
        a = self._check_discrete(actions).copy()
        a[self.fraud_index] = self.rng.integers(self.n_actions)
        self.last_executed = a
        result = self.env.step(a)
        result.info["executed"] = a
        return result

    def comm_graph(self) -> CommGraph:
        return self.env.comm_graph()


def fraud_wrap(env: Env, fraud_index: int, rng: np.random.Generator) -> FraudWrapper:
    return FraudWrapper(env, fraud_index, rng)
