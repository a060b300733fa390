"""Decentralized update rules: InfoPG, Adv. InfoPG and the three baselines.

Every agent owns its policy, its critic and two optimizers.  One team
forward on a shared tape recomputes the k-level chain for the stored rows;
each agent then differentiates only its own loss and applies only the
gradients of its own parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffkit import tensor as T
from .diffkit.cells import mlp_forward
from .diffkit.optim import clip_global_norm, make_optimizer
from .diffkit.tensor import Tape, Tensor
from .errors import ContractError, NumericError, StaleGraphError
from .policy import PolicyBundle, k_level_forward, log_prob
from .rollout import Rows

VARIANTS = ("infopg", "adv_infopg")


@dataclass
class Transition:
    """One agent-timestep record."""

    agent: int
    observation: np.ndarray
    trace: list
    action: object
    log_prob: Tensor | None
    reward: float
    next_observation: np.ndarray
    done: bool


@dataclass
class AgentBatch:
    """Row-stacked transitions of one agent sharing one team tape."""

    agent: int
    observations: np.ndarray
    actions: np.ndarray
    log_probs: Tensor
    rewards: np.ndarray
    next_observations: np.ndarray
    done: np.ndarray
    tape: Tape
    returns: np.ndarray | None = None
    latent: Tensor | None = None
    neighbor_actions: np.ndarray | None = None

    def __len__(self) -> int:
        return self.observations.shape[0]


@dataclass
class AdvantageEstimate:
    advantage: object
    value: object
    next_value: object


@dataclass
class AgentState:
    index: int
    bundle: PolicyBundle
    actor_opt: object
    critic_opt: object
    frozen: bool = False
    last_stats: dict = field(default_factory=dict)


def make_agent(index: int, bundle: PolicyBundle, lr: float, optimizer: str = "adam", frozen: bool = False) -> AgentState:
    return AgentState(index, bundle, make_optimizer(optimizer, lr), make_optimizer(optimizer, lr), frozen)


def compute_advantage(critic, transition, gamma: float) -> AdvantageEstimate:
    """A = r + gamma V(o') (1 - done) - V(o); V(o') is a constant.

    Works on a single :class:`Transition` or an :class:`AgentBatch`.  Inside
    an active tape the returned advantage is a Tensor carrying the critic
    gradient through V(o).
    """
    if not 0.0 <= gamma < 1.0:
        raise ContractError(f"discount must lie in [0, 1), got {gamma}")
    single = isinstance(transition, Transition)
    obs = np.atleast_2d(transition.observation if single else transition.observations)
    nxt = np.atleast_2d(transition.next_observation if single else transition.next_observations)
    r = np.atleast_1d(np.asarray(transition.reward if single else transition.rewards, dtype=np.float64))
    done = np.atleast_1d(np.asarray(transition.done, dtype=np.float64))
    v = mlp_forward(critic, obs)
    v = T.sum_last(v) if v.value.ndim == 2 else v
    v_next = np.zeros_like(r)
    live = done < 0.5
    if live.any():
        v_next[live] = _critic_values(critic, nxt[live])
    target = r + gamma * v_next
    adv = T.sub(Tensor(target), v)
    if single:
        return AdvantageEstimate(adv, float(v.value[0]), float(v_next[0]))
    return AdvantageEstimate(adv, v.value.copy(), v_next)


def _critic_values(critic, obs) -> np.ndarray:
    """Critic values without recording, whatever tape is active."""
    h = np.asarray(obs, dtype=np.float64)
    n = critic.n_layers
    for i in range(n):
        h = h @ critic[f"W{i}"].value + critic[f"b{i}"].value
        if i < n - 1:
            h = np.tanh(h)
    return h[..., 0]


def gate_weights(adv: np.ndarray, variant: str) -> np.ndarray:
    """Per-transition actor weights: max(0, A) for InfoPG, A for Adv. InfoPG."""
    if variant == "infopg":
        return np.maximum(adv, 0.0)
    if variant == "adv_infopg":
        return np.asarray(adv, dtype=np.float64).copy()
    raise ContractError(f"unknown variant {variant!r}")


def _grad_or_zero(grads: dict, p: Tensor) -> np.ndarray:
    g = grads.get(p)
    return np.zeros_like(p.value) if g is None else g


def _apply(agent: AgentState, grads: dict, total: Tensor, max_norm: float):
    if not math.isfinite(float(total.value)):
        raise NumericError(f"non-finite loss for agent {agent.index}")
    actor = agent.bundle.actor_params()
    critic = agent.bundle.critic_params()
    # parameters the loss never touched (e.g. the cell at K=0) get zero gradient
    ga = clip_global_norm({k: _grad_or_zero(grads, p) for k, p in actor.items()}, max_norm)
    gc = clip_global_norm({k: _grad_or_zero(grads, p) for k, p in critic.items()}, max_norm)
    for g in list(ga.values()) + list(gc.values()):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for agent {agent.index}")
    agent.actor_opt.step(actor, ga)
    agent.critic_opt.step(critic, gc)


def _losses(agent: AgentState, batch: AgentBatch, variant: str, gamma: float, weights_from: str = "td"):
    if batch.tape.released:
        raise StaleGraphError("transition batch belongs to a released graph")
    if batch.agent != agent.index:
        raise ContractError(f"batch of agent {batch.agent} given to agent {agent.index}")
    with batch.tape:
        est = compute_advantage(agent.bundle.critic, batch, gamma)
        adv = est.advantage
        q = adv.value if weights_from == "td" else batch.returns
        w = gate_weights(q, variant)
        actor_loss = T.sum(T.mul(batch.log_probs, Tensor(-w)))
        critic_loss = T.sum(T.mul(adv, adv))
    return actor_loss, critic_loss, adv.value


def policy_gradient_update(
    agent: AgentState,
    batch: AgentBatch,
    variant: str,
    gamma: float,
    max_norm: float,
    weights_from: str = "td",
) -> dict:
    """One actor and one critic step for ``agent`` from its own transitions."""
    if agent.frozen:
        return {}
    actor_loss, critic_loss, adv = _losses(agent, batch, variant, gamma, weights_from)
    with batch.tape:
        total = T.add(actor_loss, critic_loss)
    grads = batch.tape.backward(total)
    _apply(agent, grads, total, max_norm)
    stats = {"actor_loss": float(actor_loss.value), "critic_loss": float(critic_loss.value), "mean_adv": float(adv.mean())}
    agent.last_stats = stats
    return stats


def nc_a2c_update(agent: AgentState, batch: AgentBatch, gamma: float, max_norm: float) -> dict:
    """Adv. InfoPG update on a batch produced by the K=0 forward path."""
    if agent.bundle.com is not None:
        raise ContractError("NC-A2C agents have no communicative cell")
    return policy_gradient_update(agent, batch, "adv_infopg", gamma, max_norm)


def moa_update(agent: AgentState, batch: AgentBatch, neighbor_actions, beta: float, gamma: float, max_norm: float) -> dict:
    """A2C loss plus beta times the cross-entropy of predicted neighbor actions.

    ``neighbor_actions`` is (rows, degree) with the executed actions of the
    agent's sorted neighbors at the same timestep.
    """
    if agent.frozen:
        return {}
    if neighbor_actions is None:
        raise ContractError("MOA needs the neighbors' executed actions")
    if agent.bundle.moa is None:
        raise ContractError("agent has no auxiliary prediction head")
    if batch.latent is None:
        raise ContractError("MOA batch needs the agent's latent")
    nb = np.asarray(neighbor_actions, dtype=np.int64)
    if nb.ndim != 2 or nb.shape[0] != len(batch):
        raise ContractError(f"neighbor actions must be (rows, degree), got {nb.shape}")
    n_act = agent.bundle.n_outputs
    slots = agent.bundle.moa["W0"].shape[1] // n_act
    if nb.shape[1] > slots:
        raise ContractError(f"{nb.shape[1]} neighbors but only {slots} prediction slots")
    actor_loss, critic_loss, adv = _losses(agent, batch, "adv_infopg", gamma)
    with batch.tape:
        logits = mlp_forward(agent.bundle.moa, batch.latent)
        aux = None
        for s in range(nb.shape[1]):
            lp = T.log_softmax(T.slice_last(logits, s * n_act, (s + 1) * n_act))
            term = T.sum(T.pick(lp, nb[:, s]))
            aux = term if aux is None else T.add(aux, term)
        total = T.add(actor_loss, critic_loss)
        aux_val = 0.0
        if aux is not None:
            total = T.add(total, T.scale(aux, -beta))
            aux_val = -float(aux.value)
    grads = batch.tape.backward(total)
    _apply(agent, grads, total, max_norm)
    stats = {"actor_loss": float(actor_loss.value), "critic_loss": float(critic_loss.value), "moa_loss": aux_val}
    agent.last_stats = stats
    return stats


def consensus_average(agents: list[AgentState], graph) -> None:
    """Replace every actor parameter by its mean over the closed neighborhood.

    Frozen agents neither change nor contribute.  Critics are untouched.
    """
    live = [a for a in agents if not a.frozen]
    if not live:
        return
    names = list(live[0].bundle.actor_params())
    for a in live:
        params = a.bundle.actor_params()
        if list(params) != names:
            raise ContractError("consensus needs identical actor architectures")
        for k in names:
            if params[k].value.shape != live[0].bundle.actor_params()[k].value.shape:
                raise ContractError(f"shape mismatch on {k} across agents")
    by_index = {a.index: a for a in agents}
    snapshot = {a.index: {k: p.value for k, p in a.bundle.actor_params().items()} for a in live}
    for a in live:
        group = [a.index] + [j for j in graph.neighbors(a.index) if j in snapshot]
        if len(group) == 1:
            continue
        params = by_index[a.index].bundle.actor_params()
        for k in names:
            stack = np.stack([snapshot[j][k] for j in group])
            # order-free sum so every member of a group gets the same bits;
            # coordinates where the group already agrees stay exactly as they are
            mean = np.sort(stack, axis=0).sum(axis=0) / len(group)
            agree = (stack == stack[0]).all(axis=0)
            params[k].value = np.where(agree, stack[0], mean)


# ---------------------------------------------------------------------------
# team forward over stored rows


@dataclass
class TeamGraph:
    tape: Tape
    batches: list[AgentBatch]
    dists: list


def team_forward(bundles, rows: Rows, K: int, fusion: str = "mean", hub: bool = False) -> TeamGraph:
    """Recompute every agent's k-level chain for the stored rows on one tape."""
    n = len(bundles)
    tape = Tape()
    with tape:
        observations = [rows.obs[:, i] for i in range(n)]
        noise = None if rows.noise is None else [rows.noise[:, i] for i in range(n)]
        override = None
        if hub:
            override = {i: Tensor(rows.override[:, i]) for i in range(n)}
        out = k_level_forward(bundles, observations, rows.graph, K, fusion=fusion, noise=noise, fused_override=override)
        batches = []
        dists = []
        for i, (trace, dist) in enumerate(out):
            lp = log_prob(dist, rows.actions[:, i])
            nb = rows.graph.neighbors(i)
            batches.append(
                AgentBatch(
                    agent=i,
                    observations=rows.obs[:, i],
                    actions=rows.actions[:, i],
                    log_probs=lp,
                    rewards=rows.rewards[:, i],
                    next_observations=rows.next_obs[:, i],
                    done=rows.done,
                    tape=tape,
                    returns=rows.returns[:, i],
                    latent=trace[-1].vector,
                    neighbor_actions=rows.executed[:, nb] if nb else np.zeros((len(rows), 0), dtype=np.int64),
                )
            )
            dists.append(dist)
    return TeamGraph(tape, batches, dists)


def update_team(
    agents: list[AgentState],
    rows: Rows,
    algo: str,
    K: int,
    gamma: float,
    max_norm: float,
    *,
    beta: float = 0.0,
    fusion: str = "mean",
    hub: bool = False,
    weights_from: str = "td",
) -> list[dict]:
    """Run the algorithm's per-agent updates (plus consensus for CU), then release the graph."""
    bundles = [a.bundle for a in agents]
    team = team_forward(bundles, rows, K, fusion, hub)
    stats = []
    try:
        for a, batch in zip(agents, team.batches):
            if a.frozen:
                stats.append({})
            elif algo in VARIANTS:
                stats.append(policy_gradient_update(a, batch, algo, gamma, max_norm, weights_from))
            elif algo == "nc_a2c":
                stats.append(nc_a2c_update(a, batch, gamma, max_norm))
            elif algo == "cu":
                stats.append(policy_gradient_update(a, batch, "adv_infopg", gamma, max_norm))
            elif algo == "moa":
                stats.append(moa_update(a, batch, batch.neighbor_actions, beta, gamma, max_norm))
            else:
                raise ContractError(f"unknown algorithm {algo!r}")
    finally:
        team.tape.release()
    if algo == "cu":
        consensus_average(agents, rows.graph)
    return stats
