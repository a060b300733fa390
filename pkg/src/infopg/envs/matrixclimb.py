"""MatrixClimb: the two-player climb coordination game as a repeated game."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .base import CommGraph, Env, StepResult

CLIMB_PAYOFFS = np.array(
    [
        [11.0, -30.0, 0.0],
        [-30.0, 7.0, 6.0],
        [0.0, 6.0, 5.0],
    ]
)
PAYOFF_SCALE = 30.0


def climb_matrix() -> np.ndarray:
    return CLIMB_PAYOFFS / PAYOFF_SCALE


class MatrixClimb(Env):
    """Stateless repeated game; both agents receive the shared scaled payoff.

    The episode is solved (and ends) when the joint action (0, 0) is played.
    """

    name = "matrixclimb"
    n_agents = 2
    n_actions = 3
    obs_dim = 1

    def __init__(self, max_cycles: int = 1):
        if max_cycles < 1:
            raise ContractError("max_cycles must be >= 1")
        self.max_cycles = max_cycles
        self.payoffs = climb_matrix()
        self._graph = CommGraph(2, frozenset({(0, 1)}))
        self.t = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.t = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.ones((2, 1))

    def comm_graph(self) -> CommGraph:
        return self._graph

    def step(self, actions) -> StepResult:
        if self.done:
            raise ContractError("step() on a finished episode; call reset()")
        a = self._check_discrete(actions)
        r = self.payoffs[a[0], a[1]]
        self.t += 1
        solved = bool(a[0] == 0 and a[1] == 0)
        self.done = solved or self.t >= self.max_cycles
        return StepResult(self.observe(), np.array([r, r]), self.done, solved, self._graph)


class ContinuousClimb(Env):
    """Climb game over actions in [-1, 1]: bilinear interpolation of the payoff grid.

    Action -1, 0, +1 sit on matrix rows/columns 0, 1, 2.
    """

    name = "matrixclimb-continuous"
    n_agents = 2
    action_dim = 1
    continuous = True
    obs_dim = 1

    def __init__(self, max_cycles: int = 1, solve_radius: float = 0.25):
        self.max_cycles = max_cycles
        self.solve_radius = solve_radius
        self.payoffs = climb_matrix()
        self._graph = CommGraph(2, frozenset({(0, 1)}))
        self.t = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.t = 0
        self.done = False
        return np.ones((2, 1))

    def comm_graph(self) -> CommGraph:
        return self._graph

    def payoff(self, a0: float, a1: float) -> float:
        u = np.clip(a0, -1.0, 1.0) + 1.0
        v = np.clip(a1, -1.0, 1.0) + 1.0
        i, j = min(int(u), 1), min(int(v), 1)
        fu, fv = u - i, v - j
        m = self.payoffs
        return float(
            (1 - fu) * (1 - fv) * m[i, j] + fu * (1 - fv) * m[i + 1, j] + (1 - fu) * fv * m[i, j + 1] + fu * fv * m[i + 1, j + 1]
        )

    def step(self, actions) -> StepResult:
        if self.done:
            raise ContractError("step() on a finished episode; call reset()")
        a = np.asarray(actions, dtype=np.float64).reshape(self.n_agents, -1)
        if not np.isfinite(a).all():
            raise ContractError("non-finite continuous action")
        r = self.payoff(a[0, 0], a[1, 0])
        self.t += 1
        solved = bool(np.all(np.abs(a[:, 0] + 1.0) < self.solve_radius))
        self.done = solved or self.t >= self.max_cycles
        return StepResult(np.ones((2, 1)), np.array([r, r]), self.done, solved, self._graph)
