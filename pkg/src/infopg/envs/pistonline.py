"""PistonLine: a discrete, rule-based analog of cooperative piston ball pushing.

``n`` pistons stand in a row, each with an integer height in ``[0, height]``.
The ball rests on a span of two adjacent pistons ``(x, x + 1)``.  After the
pistons move, the ball rolls one cell left when its right support stands at
least ``lift`` above its left support.  Episodes are solved when the ball
reaches cell 0.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .base import TIME_PENALTY, CommGraph, Env, StepResult

UP, DOWN, STAY = 0, 1, 2
WALL = -1.0


class PistonLine(Env):
    name = "pistonline"
    n_actions = 3
    obs_dim = 5

    def __init__(
        self,
        n_agents: int = 5,
        height: int = 4,
        lift: int = 1,
        max_cycles: int = 200,
        ball_start: int | None = None,
        init_heights: str = "random",
        fov: int | None = None,
        roll_back: bool = False,
        ball_obs: str = "position",
    ):
        if n_agents < 3:
            raise ContractError("PistonLine needs at least 3 pistons")
        if height < 1 or lift < 1:
            raise ContractError("height and lift must be >= 1")
        if ball_obs not in ("position", "contact"):
            raise ContractError(f"unknown ball_obs {ball_obs!r}")
        if init_heights not in ("random", "flat"):
            raise ContractError(f"unknown init_heights {init_heights!r}")
        self.n_agents = n_agents
        self.height = height
        self.lift = lift
        self.max_cycles = max_cycles
        self.ball_start = n_agents - 2 if ball_start is None else ball_start
        if not 1 <= self.ball_start <= n_agents - 2:
            raise ContractError(f"ball_start must lie in [1, {n_agents - 2}]")
        self.init_heights = init_heights
        self.fov = fov
        self.roll_back = roll_back
        self.ball_obs = ball_obs
        self._graph = CommGraph.chain(n_agents)
        self.heights = np.zeros(n_agents, dtype=np.int64)
        self.ball_x = self.ball_start
        self.t = 0
        self.done = True

    # -- state -------------------------------------------------------------

    def set_state(self, heights, ball_x: int, t: int = 0):
        heights = np.asarray(heights, dtype=np.int64)
        if heights.shape != (self.n_agents,) or (heights < 0).any() or (heights > self.height).any():
            raise ContractError(f"invalid heights {heights}")
        if not 0 <= ball_x <= self.n_agents - 2:
            raise ContractError(f"invalid ball position {ball_x}")
        self.heights = heights.copy()
        self.ball_x = int(ball_x)
        self.t = t
        self.done = ball_x == 0
        return self.observe()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        if self.init_heights == "random":
            heights = rng.integers(0, self.height + 1, size=self.n_agents)
        else:
            heights = np.full(self.n_agents, self.height // 2)
        return self.set_state(heights, self.ball_start, 0)

    @property
    def ball_height(self) -> int:
        return int(max(self.heights[self.ball_x], self.heights[self.ball_x + 1]))

    def comm_graph(self) -> CommGraph:
        return self._graph

    def observe(self) -> np.ndarray:
        n, h = self.n_agents, self.heights / self.height
        obs = np.empty((n, self.obs_dim))
        obs[:, 0] = h
        obs[0, 1] = WALL
        obs[1:, 1] = h[:-1]
        obs[-1, 2] = WALL
        obs[:-1, 2] = h[1:]
        centre = self.ball_x + 0.5
        rel = (centre - np.arange(n)) / n
        bh = self.ball_height / self.height
        obs[:, 3] = rel
        obs[:, 4] = bh
        if self.ball_obs == "contact":
            # only the two supports feel the ball, and not on which side it rests
            under = (np.arange(n) == self.ball_x) | (np.arange(n) == self.ball_x + 1)
            obs[:, 3] = np.where(under, 1.0, WALL)
            obs[~under, 4] = WALL
        elif self.fov is not None:
            hidden = np.abs(centre - np.arange(n)) > self.fov + 0.5
            obs[hidden, 3] = WALL
            obs[hidden, 4] = WALL
        return obs

    # -- dynamics ------------------------------------------------------------

    def step(self, actions) -> StepResult:
        if self.done:
            raise ContractError("step() on a finished episode; call reset()")
        a = self._check_discrete(actions)
        delta = np.where(a == UP, 1, np.where(a == DOWN, -1, 0))
        self.heights = np.clip(self.heights + delta, 0, self.height)
        x = self.ball_x
        left, right = self.heights[x], self.heights[x + 1]
        new_x = x
        if right >= left + self.lift:
            new_x = x - 1
        elif self.roll_back and left >= right + self.lift and x + 1 <= self.n_agents - 2:
            new_x = x + 1
        rewards = np.full(self.n_agents, -TIME_PENALTY)
        rewards[x] += x - new_x
        rewards[x + 1] += x - new_x
        self.ball_x = new_x
        self.t += 1
        solved = new_x == 0
        self.done = solved or self.t >= self.max_cycles
        return StepResult(self.observe(), rewards, self.done, solved, self._graph, {"ball_x": new_x})

    def scripted_actions(self) -> np.ndarray:
        """Staircase oracle: lift the right support, lower everything to its left."""
        a = np.full(self.n_agents, STAY)
        x = self.ball_x
        a[: x + 1] = DOWN
        a[x + 1 :] = UP
        return a
