"""Two-part communicative policies and the k-level rationalization pipeline.

Each agent owns a :class:`PolicyBundle`: an encoder mapping its observation to
a level-0 latent action guess, a recurrent communicative cell that refines the
guess with its neighbors' guesses, an action head, and a critic.  One call of
:func:`k_level_forward` runs all agents in lockstep for K rounds of latent
exchange; the whole chain is recorded on the active tape, so differentiating
the final log-probability covers every level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffkit import tensor as T
from .diffkit.cells import CellParams, cell_step, init_gru, init_mlp, init_vrnn, mlp_forward
from .diffkit.tensor import Tensor
from .envs.base import CommGraph
from .errors import ContractError, DimensionError

LOG_PROB_FLOOR = 1e-12
DEFAULT_STD = 0.2


@dataclass
class LatentAction:
    level: int
    vector: Tensor

    @property
    def width(self) -> int:
        return self.vector.shape[-1]


@dataclass
class PolicyBundle:
    """Parameters owned by one agent."""

    encoder: CellParams
    head: CellParams
    critic: CellParams
    com: CellParams | None = None
    moa: CellParams | None = None
    continuous: bool = False
    std: float = DEFAULT_STD
    frozen: bool = False

    @property
    def latent_size(self) -> int:
        return self.encoder[f"W{self.encoder.n_layers - 1}"].shape[1]

    @property
    def obs_dim(self) -> int:
        return self.encoder["W0"].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.head["W0"].shape[1]

    def actor_params(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.encoder.named()}
        if self.com is not None:
            out.update({f"com.{k}": v for k, v in self.com.named()})
        out.update({f"head.{k}": v for k, v in self.head.named()})
        if self.moa is not None:
            out.update({f"moa.{k}": v for k, v in self.moa.named()})
        return out

    def critic_params(self) -> dict[str, Tensor]:
        return {f"critic.{k}": v for k, v in self.critic.named()}

    def all_params(self) -> dict[str, Tensor]:
        out = self.actor_params()
        out.update(self.critic_params())
        return out

    def load(self, arrays: dict[str, np.ndarray]):
        params = self.all_params()
        if set(arrays) != set(params):
            raise ContractError("checkpoint tensors do not match the policy architecture")
        for k, p in params.items():
            if arrays[k].shape != p.value.shape:
                raise ContractError(f"checkpoint shape mismatch for {k}: {arrays[k].shape} vs {p.value.shape}")
            p.value = np.array(arrays[k], dtype=np.float64)


@dataclass
class ActionDistribution:
    kind: str
    logits: Tensor | None = None
    log_probs: Tensor | None = None
    mean: Tensor | None = None
    std: float = DEFAULT_STD
    probs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "categorical" and self.probs is None:
            self.probs = np.exp(self.log_probs.value)

    @property
    def map_action(self):
        if self.kind == "categorical":
            return np.argmax(self.probs, axis=-1)
        return self.mean.value.copy()

    @property
    def map_prob(self):
        if self.kind != "categorical":
            raise ContractError("MAP probability is defined for categorical policies only")
        return self.probs.max(axis=-1)


def make_bundle(
    obs_dim: int,
    n_outputs: int,
    latent_size: int,
    rng: np.random.Generator,
    *,
    hidden: int = 32,
    cell: str | None = "gru",
    continuous: bool = False,
    std: float = DEFAULT_STD,
    moa_slots: int = 0,
) -> PolicyBundle:
    """Initialize one agent's parameters; ``cell=None`` builds a non-communicative policy."""
    encoder = init_mlp([obs_dim, hidden, latent_size], rng)
    if cell == "gru":
        com = init_gru(latent_size, rng)
    elif cell == "vrnn":
        com = init_vrnn(latent_size)
    elif cell is None:
        com = None
    else:
        raise ContractError(f"unknown cell kind {cell!r}")
    head = init_mlp([latent_size, n_outputs], rng)
    critic = init_mlp([obs_dim, hidden, 1], rng)
    moa = init_mlp([latent_size, moa_slots * n_outputs], rng) if moa_slots else None
    return PolicyBundle(encoder, head, critic, com, moa, continuous, std)


def encode_level0(bundle: PolicyBundle, obs, noise=None) -> LatentAction:
    """Level-0 latent guess from the agent's own observation."""
    obs = T.as_tensor(obs)
    if obs.shape[-1] != bundle.obs_dim:
        raise DimensionError(f"observation width {obs.shape[-1]} != encoder input {bundle.obs_dim}")
    latent = T.tanh(mlp_forward(bundle.encoder, obs))
    if noise is not None:
        latent = T.add(latent, T.as_tensor(noise))
    return LatentAction(0, latent)


def fuse_neighbors(latents: Sequence[LatentAction], width: int | None = None) -> Tensor:
    """Arithmetic mean of neighbor latents (zero vector when there are none)."""
    if not latents:
        if width is None:
            raise ContractError("width is required to fuse an empty neighbor set")
        return Tensor(np.zeros(width))
    level = latents[0].level
    w = latents[0].width
    for lat in latents:
        if lat.level != level:
            raise ContractError(f"cannot fuse latents of levels {level} and {lat.level}")
        if lat.width != w:
            raise DimensionError("neighbor latents have different widths")
    return T.mean_of([lat.vector for lat in latents])


def communicate_level(bundle: PolicyBundle, own: LatentAction, fused, expected_level: int | None = None) -> LatentAction:
    """One recurrent step: hidden = own level-(k-1) latent, input = fused neighbors."""
    if bundle.com is None:
        raise ContractError("policy has no communicative cell")
    if expected_level is not None and own.level != expected_level - 1:
        raise ContractError(f"own latent has level {own.level}, expected {expected_level - 1}")
    fused = T.as_tensor(fused)
    if fused.shape != own.vector.shape:
        fused = Tensor(np.broadcast_to(fused.value, own.vector.shape)) if fused.tape is None else fused
    return LatentAction(own.level + 1, cell_step(bundle.com, own.vector, fused))


def action_distribution(bundle: PolicyBundle, latent: LatentAction) -> ActionDistribution:
    out = mlp_forward(bundle.head, latent.vector)
    if bundle.continuous:
        return ActionDistribution("gaussian", mean=T.tanh(out), std=bundle.std)
    return ActionDistribution("categorical", logits=out, log_probs=T.log_softmax(out))


def _sequential_fuse(bundle, own: LatentAction, neighbors: list[LatentAction]) -> LatentAction:
    h = own.vector
    if not neighbors:
        h = cell_step(bundle.com, h, Tensor(np.zeros(h.shape)))
    for lat in neighbors:
        h = cell_step(bundle.com, h, lat.vector)
    return LatentAction(own.level + 1, h)


def k_level_forward(
    bundles: Sequence[PolicyBundle],
    observations,
    graph: CommGraph,
    K: int,
    *,
    fusion: str = "mean",
    noise=None,
    fused_override: dict | None = None,
) -> list[tuple[list[LatentAction], ActionDistribution]]:
    """Run encode -> K synchronous exchange rounds -> action head for every agent.

    ``observations[i]`` is agent i's observation (obs_dim,) or a row batch
    (B, obs_dim).  ``noise[i]``, when given, is added to the level-0 latent.
    ``fused_override[i]`` replaces agent i's fused neighbor input at every
    level with a fixed message (used for delayed relay routing).
    """
    n = len(bundles)
    if K < 0:
        raise ContractError("K must be non-negative")
    if graph.n != n or len(observations) != n:
        raise ContractError(f"graph covers {graph.n} agents, got {n} policies and {len(observations)} observations")
    traces = []
    for i, b in enumerate(bundles):
        lat = encode_level0(b, observations[i], None if noise is None else noise[i])
        traces.append([lat])
    for k in range(1, K + 1):
        prev = [tr[-1] for tr in traces]
        for i, b in enumerate(bundles):
            own = prev[i]
            if fused_override is not None and i in fused_override:
                nxt = communicate_level(b, own, fused_override[i], k)
            elif fusion == "sequential":
                nxt = _sequential_fuse(b, own, [prev[j] for j in graph.neighbors(i)])
            else:
                nb = [prev[j] for j in graph.neighbors(i)]
                fused = fuse_neighbors(nb, own.width) if nb else Tensor(np.zeros(own.vector.shape))
                nxt = communicate_level(b, own, fused, k)
            traces[i].append(nxt)
    return [(tr, action_distribution(b, tr[-1])) for tr, b in zip(traces, bundles)]


def log_prob(dist: ActionDistribution, action) -> Tensor:
    """Differentiable log-probability of ``action`` (one per row for batches)."""
    if dist.kind == "categorical":
        lp = T.pick(dist.log_probs, action)
        return T.clamp_min(lp, math.log(LOG_PROB_FLOOR))
    x = np.asarray(action, dtype=np.float64).reshape(dist.mean.shape)
    var = dist.std**2
    diff = T.sub(Tensor(x), dist.mean)
    per_dim = T.add(T.scale(T.mul(diff, diff), -1.0 / (2.0 * var)), Tensor(np.full(diff.shape, -0.5 * math.log(2 * math.pi * var))))
    return T.sum_last(per_dim)


def select_action(dist: ActionDistribution, mode: str, rng: np.random.Generator | None = None):
    """``mode='map'`` takes the most probable action; ``mode='sample'`` draws from ``rng``."""
    if mode == "map":
        return dist.map_action
    if mode != "sample":
        raise ContractError(f"unknown action mode {mode!r}")
    if rng is None:
        raise ContractError("sampling needs an rng")
    if dist.kind == "categorical":
        return sample_categorical(dist.probs, rng)
    mu = dist.mean.value
    return mu + dist.std * rng.standard_normal(mu.shape)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator):
    """Inverse-CDF sampling, one uniform draw per row."""
    probs = np.asarray(probs)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
    idx = (u >= cdf).sum(axis=-1)
    idx = np.minimum(idx, probs.shape[-1] - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def map_conditional_prob(bundles, observations, graph: CommGraph, K: int, pair: tuple[int, int], **kw) -> float:
    """Probability agent i's final-level policy puts on its MAP action, for edge (i, j)."""
    i, j = pair
    if not graph.has_edge(i, j):
        raise ContractError(f"agents {i} and {j} are not adjacent")
    with_no_tape = k_level_forward(bundles, observations, graph, K, **kw)
    return float(np.max(with_no_tape[i][1].probs))
