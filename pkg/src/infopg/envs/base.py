from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from ..errors import ContractError

TIME_PENALTY = 0.007


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph over ``n`` agents for one timestep."""

    n: int
    edges: frozenset = frozenset()

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise ContractError(f"self-loop on agent {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ContractError(f"edge ({i}, {j}) outside [0, {self.n})")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def chain(cls, n: int) -> CommGraph:
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def empty(cls, n: int) -> CommGraph:
        return cls(n, frozenset())

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i: int) -> list[int]:
        return self._neighbor_lists[i]

    @cached_property
    def _neighbor_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            out[i].append(j)
            out[j].append(i)
        return [sorted(x) for x in out]

    def directed_pairs(self) -> list[tuple[int, int]]:
        return sorted([(i, j) for i, j in self.edges] + [(j, i) for i, j in self.edges])

    def mean_matrix(self) -> np.ndarray:
        """Row-normalised adjacency: row i averages i's neighbors (zero row if isolated)."""
        m = np.zeros((self.n, self.n))
        for i in range(self.n):
            nb = self.neighbors(i)
            if nb:
                m[i, nb] = 1.0 / len(nb)
        return m

    @property
    def max_degree(self) -> int:
        return max((len(x) for x in self._neighbor_lists), default=0)


@dataclass
class StepResult:
    observations: np.ndarray
    rewards: np.ndarray
    done: bool
    solved: bool
    graph: CommGraph
    info: dict[str, Any] = field(default_factory=dict)


@dataclass
class EnvConfig:
    name: str
    n_agents: int | None = None
    max_cycles: int | None = None
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.max_cycles is not None and self.max_cycles < 1:
            raise ContractError("max_cycles must be >= 1")


class Env:
    """Common surface of the analog environments."""

    name = "env"
    n_agents: int
    obs_dim: int
    n_actions: int = 0
    action_dim: int = 0
    continuous = False
    max_cycles: int

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, actions) -> StepResult:
        raise NotImplementedError

    def comm_graph(self) -> CommGraph:
        raise NotImplementedError

    def _check_discrete(self, actions) -> np.ndarray:
        a = np.asarray(actions)
        if a.shape != (self.n_agents,):
            raise ContractError(f"expected {self.n_agents} actions, got shape {a.shape}")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.equal(np.mod(a, 1), 0)):
                raise ContractError(f"non-integer action in {a}")
            a = a.astype(np.int64)
        if (a < 0).any() or (a >= self.n_actions).any():
            raise ContractError(f"action index outside [0, {self.n_actions}): {a}")
        return a
