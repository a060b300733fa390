"""Graph-free batched rollouts through the packed inference kernel.

Rollouts never record a computation graph: actions are chosen from the
packed copy of every agent's actor and the visited rows are stored, so the
update can recompute the k-level chain on a tape from the same inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .envs.base import CommGraph, Env
from .errors import ContractError
from .policy import sample_categorical


@dataclass
class RolloutSpec:
    """Everything about message routing and action choice that a rollout needs."""

    K: int
    mode: str = "sample"
    hub: bool = False
    latent_noise: float = 0.0
    fraud_index: int | None = None
    fraud_noise: float = 0.0
    continuous: bool = False
    std: float = 0.2


@dataclass
class Rows:
    """Visited (episode, timestep) rows; every array is indexed by row first."""

    obs: np.ndarray
    actions: np.ndarray
    executed: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    returns: np.ndarray
    map_probs: np.ndarray | None
    noise: np.ndarray | None
    override: np.ndarray | None
    episode: np.ndarray
    timestep: np.ndarray
    graph: CommGraph

    def __len__(self) -> int:
        return self.obs.shape[0]


@dataclass
class EpisodeStats:
    rewards: np.ndarray  # (B, N) summed per episode
    lengths: np.ndarray  # (B,)
    solved: np.ndarray  # (B,)
    extra: dict = field(default_factory=dict)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _returns_to_go(rewards: list[np.ndarray], gamma: float) -> np.ndarray:
    out = np.zeros((len(rewards), rewards[0].shape[0]))
    acc = np.zeros(rewards[0].shape[0])
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def collect(
    envs: list[Env],
    bundles,
    spec: RolloutSpec,
    agent_rngs: list[np.random.Generator],
    env_rng: np.random.Generator,
    noise_rng: np.random.Generator | None = None,
    gamma: float = 0.99,
    packed=None,
    impl=None,
) -> tuple[Rows, EpisodeStats]:
    """Play one episode in each of ``envs`` in lockstep and return the visited rows."""
    B = len(envs)
    n = envs[0].n_agents
    packed = packed if packed is not None else _kernels.pack(bundles)
    d = bundles[0].latent_size
    obs = np.stack([e.reset(env_rng) for e in envs])
    graph = envs[0].comm_graph()
    mix = graph.mean_matrix()
    hub_lat = np.zeros((B, n, d)) if spec.hub else None
    override_mask = np.ones(n, dtype=np.uint8) if spec.hub else None
    partner = np.array([n - 1 - i for i in range(n)]) if spec.hub else None
    if spec.hub and n != 2:
        raise ContractError("hub routing needs exactly two agents")
    active = np.ones(B, dtype=bool)
    per_ep: list[dict[str, list]] = [
        {k: [] for k in ("obs", "act", "exe", "rew", "nxt", "done", "p", "noise", "ov")} for _ in range(B)
    ]
    ep_reward = np.zeros((B, n))
    lengths = np.zeros(B, dtype=np.int64)
    solved = np.zeros(B, dtype=bool)
    need_noise = spec.latent_noise > 0 or (spec.fraud_index is not None and spec.fraud_noise > 0)

    while active.any():
        idx = np.flatnonzero(active)
        o = obs[idx]
        noise = None
        if need_noise:
            noise = np.zeros((len(idx), n, d))
            if spec.latent_noise > 0:
                noise += spec.latent_noise * noise_rng.standard_normal((len(idx), n, d))
            if spec.fraud_index is not None and spec.fraud_noise > 0:
                noise[:, spec.fraud_index] = spec.fraud_noise * noise_rng.uniform(-1.0, 1.0, (len(idx), d))
        ov = hub_lat[idx][:, partner] if spec.hub else None
        out, lat = _kernels.k_level_infer(packed, o, mix, spec.K, noise, ov, override_mask, impl=impl)
        if spec.continuous:
            mean = np.tanh(out)
            if spec.mode == "map":
                act = mean.copy()
            else:
                act = np.empty_like(mean)
                for i in range(n):
                    act[:, i] = mean[:, i] + spec.std * agent_rngs[i].standard_normal(mean[:, i].shape)
            probs = None
        else:
            probs = _softmax_rows(out)
            if spec.mode == "map":
                act = np.argmax(probs, axis=-1)
            elif spec.mode == "sample":
                act = np.empty((len(idx), n), dtype=np.int64)
                for i in range(n):
                    act[:, i] = sample_categorical(probs[:, i], agent_rngs[i])
            else:
                raise ContractError(f"unknown action mode {spec.mode!r}")
        for r, b in enumerate(idx):
            res = envs[b].step(act[r])
            exe = res.info.get("executed", act[r])
            rec = per_ep[b]
            rec["obs"].append(o[r])
            rec["act"].append(act[r])
            rec["exe"].append(np.asarray(exe))
            rec["rew"].append(res.rewards)
            rec["nxt"].append(res.observations)
            rec["done"].append(res.done)
            if probs is not None:
                rec["p"].append(probs[r].max(axis=-1))
            if noise is not None:
                rec["noise"].append(noise[r])
            if ov is not None:
                rec["ov"].append(ov[r])
            if spec.hub and res.info.get("hit") is not None:
                hub_lat[b, res.info["hit"]] = lat[r, res.info["hit"]]
            ep_reward[b] += res.rewards
            lengths[b] += 1
            obs[b] = res.observations
            if res.done:
                active[b] = False
                solved[b] = res.solved

    def cat(key, per_row=None):
        parts = [np.asarray(rec[key]) for rec in per_ep if rec[key]]
        return np.concatenate(parts) if parts else per_row

    rets = np.concatenate([_returns_to_go(rec["rew"], gamma) for rec in per_ep])
    rows = Rows(
        obs=cat("obs"),
        actions=cat("act"),
        executed=cat("exe"),
        rewards=cat("rew"),
        next_obs=cat("nxt"),
        done=cat("done").astype(np.float64),
        returns=rets,
        map_probs=cat("p"),
        noise=cat("noise"),
        override=cat("ov"),
        episode=np.concatenate([np.full(len(rec["rew"]), b) for b, rec in enumerate(per_ep)]),
        timestep=np.concatenate([np.arange(len(rec["rew"])) for rec in per_ep]),
        graph=graph,
    )
    return rows, EpisodeStats(ep_reward, lengths, solved)
