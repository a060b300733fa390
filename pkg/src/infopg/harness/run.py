"""Training loop, evaluation and the scripted PistonLine oracle."""

from __future__ import annotations

import json
import math
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import _kernels
from ..envs import make_env
from ..envs.base import Env
from ..errors import ContractError, InfoPGError, NumericError
from ..policy import PolicyBundle, make_bundle
from ..rollout import RolloutSpec, collect
from ..trainers import AgentState, make_agent, update_team
from .checkpoint import save_checkpoint
from .config import RunConfig
from .metrics import EpochMetrics, MetricsWriter, epoch_metrics, mi_summary
from .seeding import Streams

PLATEAU_WINDOW = 50


class RunFailure(InfoPGError):
    """A run aborted after startup (non-finite loss, diverged parameters)."""


@dataclass
class RunResult:
    metrics: list[EpochMetrics]
    agents: list[AgentState]
    out_dir: Path | None = None
    checkpoint: Path | None = None
    initial_checksums: list[str] = field(default_factory=list)


def build_envs(cfg: RunConfig, count: int, streams: Streams) -> list[Env]:
    return [make_env(cfg.env, fraud_rng=streams.get(f"fraud/env{b}")) for b in range(count)]


def build_team(cfg: RunConfig, env: Env, streams: Streams) -> list[AgentState]:
    n = env.n_agents
    n_out = env.action_dim if env.continuous else env.n_actions
    moa_slots = env.comm_graph().max_degree if cfg.algo == "moa" else 0
    agents = []
    for i in range(n):
        bundle = make_bundle(
            env.obs_dim,
            n_out,
            cfg.latent_size,
            streams.init(i),
            hidden=cfg.hidden,
            cell=cfg.cell,
            continuous=env.continuous,
            std=cfg.std,
            moa_slots=moa_slots,
        )
        frozen = cfg.fraud_index == i
        bundle.frozen = frozen
        agents.append(make_agent(i, bundle, cfg.lr, cfg.optimizer, frozen))
    return agents


def rollout_spec(cfg: RunConfig, env: Env, mode: str | None = None) -> RolloutSpec:
    return RolloutSpec(
        K=cfg.K,
        mode=mode or cfg.action_mode,
        hub=cfg.env.name == "relaypong" and cfg.K > 0,
        latent_noise=cfg.latent_noise,
        fraud_index=cfg.fraud_index,
        fraud_noise=cfg.fraud_noise if cfg.fraud_latents == "noise" else 0.0,
        continuous=env.continuous,
        std=cfg.std,
    )


def checksum(bundle: PolicyBundle) -> str:
    import hashlib

    h = hashlib.sha256()
    for k, p in sorted(bundle.all_params().items()):
        h.update(k.encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def prepare_out_dir(out_dir, force: bool) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {out} exists and is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_test"
    probe.write_text("")
    probe.unlink()
    return out


def _plateaued(history: list[float]) -> bool:
    if len(history) < 2 * PLATEAU_WINDOW:
        return False
    recent = np.mean(history[-PLATEAU_WINDOW:])
    before = np.mean(history[-2 * PLATEAU_WINDOW : -PLATEAU_WINDOW])
    return recent <= before + 1e-9


def _dump_diagnostic(out: Path | None, epoch: int, rows, exc: Exception):
    if out is None:
        return
    bad = 0
    for name in ("rewards", "obs", "next_obs"):
        arr = getattr(rows, name)
        flat = np.asarray(arr).reshape(len(rows), -1)
        idx = np.flatnonzero(~np.isfinite(flat).all(axis=1))
        if idx.size:
            bad = int(idx[0])
            break
    info = {
        "epoch": epoch,
        "error": str(exc),
        "row": bad,
        "episode": int(rows.episode[bad]),
        "timestep": int(rows.timestep[bad]),
        "observation": np.asarray(rows.obs[bad]).tolist(),
        "action": np.asarray(rows.actions[bad]).tolist(),
        "reward": np.asarray(rows.rewards[bad]).tolist(),
        "next_observation": np.asarray(rows.next_obs[bad]).tolist(),
        "done": bool(rows.done[bad]),
    }
    (out / "diagnostic.json").write_text(json.dumps(info, indent=2, default=str))


def run_training(cfg: RunConfig, out_dir=None, force: bool = False, progress=None) -> RunResult:
    """Algorithm 1 outer loop: roll out, update every agent, emit one metrics line per epoch."""
    out = prepare_out_dir(out_dir, force) if out_dir is not None else None
    streams = Streams(cfg.seed)
    envs = build_envs(cfg, cfg.batch_size, streams)
    agents = build_team(cfg, envs[0], streams)
    bundles = [a.bundle for a in agents]
    spec = rollout_spec(cfg, envs[0])
    sample_rngs = [streams.sample(i) for i in range(len(agents))]
    env_rng = streams.get("env")
    noise_rng = streams.get("noise")
    n_actions = envs[0].n_actions
    track_mi = cfg.K > 0 and not envs[0].continuous
    initial = [checksum(b) for b in bundles]
    writer = MetricsWriter(out) if out is not None else None
    if out is not None:
        (out / "config.txt").write_text(cfg.source, encoding="utf-8")
    metrics: list[EpochMetrics] = []
    history: list[float] = []
    start = time.perf_counter()
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            rows, stats = collect(envs, bundles, spec, sample_rngs, env_rng, noise_rng, cfg.gamma)
            mi = mi_summary(rows.map_probs, rows.graph, n_actions, cfg.fraud_index) if track_mi else None
            try:
                update_team(
                    agents,
                    rows,
                    cfg.algo,
                    cfg.K,
                    cfg.gamma,
                    cfg.max_grad_norm,
                    beta=cfg.beta,
                    fusion=cfg.fusion,
                    hub=spec.hub,
                    weights_from=cfg.weights,
                )
            except NumericError as exc:
                _dump_diagnostic(out, epoch, rows, exc)
                raise RunFailure(f"epoch {epoch}: {exc}") from exc
            seconds = time.perf_counter() - t0 if cfg.timing else None
            m = epoch_metrics(epoch, stats.rewards, stats.lengths, mi, seconds)
            metrics.append(m)
            if writer is not None:
                writer.write(m)
            if progress is not None:
                progress(m)
            history.append(m.team_reward)
            if cfg.early_stop and _plateaued(history):
                break
    finally:
        if writer is not None:
            writer.close()
    ckpt = None
    if out is not None:
        extra = {"env": cfg.env.name, "algo": cfg.algo, "K": cfg.K, "seed": cfg.seed}
        if cfg.timing:
            extra["total_seconds"] = time.perf_counter() - start
        ckpt = save_checkpoint(out / "checkpoint.npz", bundles, extra)
    return RunResult(metrics, agents, out, ckpt, initial)


@dataclass
class EvalSummary:
    episodes: int
    team_reward_mean: float
    team_reward_se: float
    steps_mean: float
    steps_se: float
    solve_rate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def standard_error(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(v.std(ddof=1) / math.sqrt(v.size))


def evaluate_bundles(
    cfg: RunConfig, bundles: list[PolicyBundle], episodes: int, seed: int | None = None, mode: str = "map"
) -> EvalSummary:
    """Rollouts without learning (MAP actions by default); episodes run in lockstep."""
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    streams = Streams(cfg.seed if seed is None else seed)
    envs = [make_env(cfg.env, fraud_rng=streams.get(f"eval/fraud/env{b}")) for b in range(episodes)]
    if len(bundles) != envs[0].n_agents:
        raise ContractError(f"{len(bundles)} policies for {envs[0].n_agents} agents")
    spec = rollout_spec(cfg, envs[0], mode=mode)
    rngs = [streams.get(f"eval/sample/agent{i}") for i in range(len(bundles))]
    _, stats = collect(envs, bundles, spec, rngs, streams.get("eval/env"), streams.get("eval/noise"), cfg.gamma)
    team = stats.rewards.sum(axis=1)
    return EvalSummary(
        episodes,
        float(team.mean()),
        standard_error(team),
        float(stats.lengths.mean()),
        standard_error(stats.lengths),
        float(stats.solved.mean()),
    )


def evaluate(checkpoint, cfg: RunConfig, episodes: int) -> EvalSummary:
    """Load a checkpoint into a freshly built team and evaluate it."""
    from .checkpoint import restore

    streams = Streams(cfg.seed)
    env = make_env(cfg.env, fraud_rng=streams.get("fraud/probe"))
    agents = build_team(cfg, env, streams)
    bundles = [a.bundle for a in agents]
    restore(bundles, checkpoint)
    return evaluate_bundles(cfg, bundles, episodes)


def scripted_bundles(env: Env, latent_size: int = 4, hidden: int = 4, gain: float = 50.0) -> list[PolicyBundle]:
    """K=0 networks that implement the PistonLine staircase rule exactly.

    The ball's relative position feature is positive for pistons at or left
    of the ball's left support (push DOWN) and negative otherwise (push UP).
    """
    if env.name != "pistonline":
        raise ContractError("the scripted oracle is defined for PistonLine")
    rng = np.random.default_rng(0)
    out = []
    for _ in range(env.n_agents):
        b = make_bundle(env.obs_dim, env.n_actions, latent_size, rng, hidden=hidden, cell=None)
        for p in b.all_params().values():
            p.value = np.zeros_like(p.value)
        b.encoder["W0"].value[3, 0] = gain * env.n_agents
        b.encoder["W1"].value[0, 0] = 5.0
        b.head["W0"].value[0, 1] = gain  # DOWN
        b.head["W0"].value[0, 0] = -gain  # UP
        out.append(b)
    return out
