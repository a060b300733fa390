"""RelayPong: a 1-D cooperative pong court with one paddle at each wall.

The ball travels one cell per step horizontally and bounces vertically off
the top and bottom of a ``paddle_axis``-cell axis.  Reaching a wall, the
ball is returned when that wall's paddle covers the ball's vertical cell
(+1 to the paddle) and the episode ends on a miss (-1 to the paddle).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .base import CommGraph, Env, StepResult

UP, DOWN, STAY = 0, 1, 2
HIDDEN = -1.0


class RelayPong(Env):
    name = "relaypong"
    n_agents = 2
    n_actions = 3
    obs_dim = 5

    def __init__(self, width: int = 8, paddle_axis: int = 5, paddle_len: int = 2, max_cycles: int = 300):
        if width < 2 or paddle_axis < paddle_len or paddle_len < 1:
            raise ContractError("invalid RelayPong geometry")
        self.width = width
        self.paddle_axis = paddle_axis
        self.paddle_len = paddle_len
        self.max_cycles = max_cycles
        self._graph = CommGraph(2, frozenset({(0, 1)}))
        self.paddles = np.zeros(2, dtype=np.int64)
        self.ball = np.zeros(2, dtype=np.int64)  # (x, y)
        self.vel = np.array([1, 0], dtype=np.int64)  # (vx, vy)
        self.t = 0
        self.done = True
        self.last_hitter: int | None = None

    def set_state(self, paddles, ball, vel, t: int = 0):
        self.paddles = np.asarray(paddles, dtype=np.int64).copy()
        self.ball = np.asarray(ball, dtype=np.int64).copy()
        self.vel = np.asarray(vel, dtype=np.int64).copy()
        self.t = t
        self.done = False
        self.last_hitter = None
        return self.observe()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        top = self.paddle_axis - self.paddle_len
        paddles = rng.integers(0, top + 1, size=2)
        y = int(rng.integers(0, self.paddle_axis))
        vx = 1 if rng.random() < 0.5 else -1
        vy = int(rng.integers(-1, 2))
        return self.set_state(paddles, [self.width // 2, y], [vx, vy])

    def comm_graph(self) -> CommGraph:
        return self._graph

    def covers(self, agent: int, y: int) -> bool:
        p = self.paddles[agent]
        return p <= y < p + self.paddle_len

    def observe(self) -> np.ndarray:
        obs = np.empty((2, self.obs_dim))
        x, y = self.ball
        vx, vy = self.vel
        scale_y = max(self.paddle_axis - 1, 1)
        for agent in (0, 1):
            # each paddle sees the ball only inside its own half of the court
            dist = x if agent == 0 else self.width - 1 - x
            toward = -vx if agent == 0 else vx
            obs[agent, 0] = self.paddles[agent] / max(self.paddle_axis - self.paddle_len, 1)
            if dist < (self.width + 1) // 2:
                obs[agent, 1] = dist / self.width
                obs[agent, 2] = y / scale_y
                obs[agent, 3] = toward
                obs[agent, 4] = vy
            else:
                obs[agent, 1:] = HIDDEN
                obs[agent, 3] = 0.0
                obs[agent, 4] = 0.0
        return obs

    def step(self, actions) -> StepResult:
        if self.done:
            raise ContractError("step() on a finished episode; call reset()")
        a = self._check_discrete(actions)
        top = self.paddle_axis - self.paddle_len
        delta = np.where(a == UP, 1, np.where(a == DOWN, -1, 0))
        self.paddles = np.clip(self.paddles + delta, 0, top)
        rewards = np.zeros(2)
        x, y = int(self.ball[0]), int(self.ball[1])
        vx, vy = int(self.vel[0]), int(self.vel[1])
        x += vx
        y += vy
        if y < 0 or y >= self.paddle_axis:
            vy = -vy
            y = min(max(y, 0), self.paddle_axis - 1)
        hit = None
        missed = False
        wall_agent = 0 if x <= 0 else 1 if x >= self.width - 1 else None
        if wall_agent is not None:
            x = 0 if wall_agent == 0 else self.width - 1
            if self.covers(wall_agent, y):
                rewards[wall_agent] = 1.0
                offset = y - self.paddles[wall_agent]
                # deterministic deflection by contact point on the paddle
                vy = -1 if offset == 0 else 1 if offset == self.paddle_len - 1 else vy
                vx = -vx
                hit = wall_agent
                self.last_hitter = wall_agent
            else:
                rewards[wall_agent] = -1.0
                missed = True
        self.ball = np.array([x, y])
        self.vel = np.array([vx, vy])
        self.t += 1
        self.done = missed or self.t >= self.max_cycles
        info = {"hit": hit, "missed": missed}
        return StepResult(self.observe(), rewards, self.done, False, self._graph, info)
