"""Run configuration: a flat ``[section]`` / ``key = value`` grammar with per-environment defaults.

Grammar: UTF-8 text; blank lines and ``#`` comments are ignored; ``[env]``,
``[algo]`` and ``[train]`` open sections; every other line is ``key = value``
inside a section.  Values are integers, floats, ``true``/``false``,
``none`` or bare strings.  Unknown sections or keys are rejected with the
offending line number.
"""

from __future__ import annotations

import inspect
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..envs import ENVIRONMENTS
from ..envs.base import EnvConfig
from ..errors import ConfigError

ALGORITHMS = ("infopg", "adv_infopg", "nc_a2c", "cu", "moa")
COMMUNICATIVE = ("infopg", "adv_infopg")

# Tables of training hyperparameters per environment.
ENV_DEFAULTS = {
    "pistonline": dict(lr=1e-3, gamma=0.99, latent_size=20, cell="gru", epochs=1000, batch_size=4, max_grad_norm=0.75, beta=1.0),
    "relaypong": dict(lr=4e-4, gamma=0.95, latent_size=30, cell="vrnn", epochs=4000, batch_size=16, max_grad_norm=10.0, beta=0.1),
    "matrixclimb": dict(lr=5e-3, gamma=0.9, latent_size=8, cell="gru", epochs=500, batch_size=16, max_grad_norm=1.0, beta=0.1),
    "matrixclimb-continuous": dict(lr=4e-4, gamma=0.95, latent_size=30, cell="gru", epochs=1000, batch_size=16, max_grad_norm=5.0, beta=0.1),
}
FRAUD_DEFAULTS = dict(batch_size=2, max_grad_norm=0.5)

_SECTION_KEYS = {
    "env": {"name": str, "n_agents": int, "max_cycles": int, "fraud": int, "fraud_latents": str},
    "algo": {
        "name": str,
        "k": int,
        "latent_size": int,
        "cell": str,
        "hidden": int,
        "beta": float,
        "fusion": str,
        "action_mode": str,
        "std": float,
        "latent_noise": float,
        "fraud_noise": float,
        "weights": str,
        "optimizer": str,
    },
    "train": {
        "lr": float,
        "gamma": float,
        "batch_size": int,
        "max_grad_norm": float,
        "epochs": int,
        "seed": int,
        "eval_episodes": int,
        "early_stop": bool,
        "timing": bool,
    },
}


@dataclass
class RunConfig:
    env: EnvConfig
    algo: str
    K: int
    latent_size: int
    lr: float
    gamma: float
    batch_size: int
    max_grad_norm: float
    epochs: int
    beta: float = 0.0
    cell: str | None = "gru"
    hidden: int = 32
    fusion: str = "mean"
    action_mode: str = "sample"
    std: float = 0.2
    latent_noise: float = 0.0
    fraud_latents: str = "policy"
    fraud_noise: float = 1.0
    weights: str = "td"
    optimizer: str = "adam"
    seed: int = 0
    eval_episodes: int = 100
    early_stop: bool = False
    timing: bool = False
    out_dir: str | None = None
    source: str = field(default="", repr=False)

    @property
    def fraud_index(self) -> int | None:
        f = self.env.params.get("fraud")
        return None if f is None else int(f)

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, seed=seed, env=replace(self.env, seed=seed))


def _env_param_types(name: str) -> dict[str, type | None]:
    cls = ENVIRONMENTS[name]
    out = {}
    for p in inspect.signature(cls.__init__).parameters.values():
        if p.name in ("self", "max_cycles", "n_agents"):
            continue
        out[p.name] = type(p.default) if p.default not in (None, inspect.Parameter.empty) else None
    return out


_INT = re.compile(r"^[+-]?\d+$")


def _parse_value(raw: str, want, line: int, key: str):
    text = raw.strip()
    low = text.lower()
    if low == "none":
        return None
    if want is bool or (want is None and low in ("true", "false")):
        if low in ("true", "false"):
            return low == "true"
        raise ConfigError(f"{key}: expected true or false, got {text!r}", line)
    if want is int or (want is None and _INT.match(text)):
        if not _INT.match(text):
            raise ConfigError(f"{key}: expected an integer, got {text!r}", line)
        return int(text)
    if want is float or want is None:
        try:
            return float(text)
        except ValueError:
            if want is float:
                raise ConfigError(f"{key}: expected a number, got {text!r}", line) from None
    if want is str or want is None:
        if not text:
            raise ConfigError(f"{key}: empty value", line)
        return text
    raise ConfigError(f"{key}: cannot parse {text!r}", line)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document."""
    raw: dict[str, dict[str, tuple[str, int]]] = {"env": {}, "algo": {}, "train": {}}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno)
            section = stripped[1:-1].strip().lower()
            if section not in raw:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        if section is None:
            raise ConfigError("key outside any section", lineno)
        key, value = (s.strip() for s in stripped.split("=", 1))
        key = key.lower()
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        raw[section][key] = (value, lineno)

    if "name" not in raw["env"]:
        raise ConfigError("missing required key [env] name")
    if "name" not in raw["algo"]:
        raise ConfigError("missing required key [algo] name")
    env_name = raw["env"]["name"][0].strip().lower()
    if env_name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {env_name!r}", raw["env"]["name"][1])

    env_params = _env_param_types(env_name)
    values: dict[str, dict] = {"env": {}, "algo": {}, "train": {}}
    params: dict = {}
    for sec, entries in raw.items():
        for key, (value, lineno) in entries.items():
            if key in _SECTION_KEYS[sec]:
                want = _SECTION_KEYS[sec][key]
                values[sec][key] = _parse_value(value, want, lineno, key)
            elif sec == "env" and key in env_params:
                params[key] = _parse_value(value, env_params[key], lineno, key)
            else:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lineno)
            if sec == "env" and key in ("fraud", "fraud_latents"):
                params[key] = values[sec][key]

    def line_of(sec, key):
        return raw[sec].get(key, (None, None))[1]

    algo = str(values["algo"]["name"]).lower()
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}; expected one of {', '.join(ALGORITHMS)}", line_of("algo", "name"))

    fraud = params.get("fraud")
    defaults = dict(ENV_DEFAULTS[env_name])
    if fraud is not None:
        defaults.update(FRAUD_DEFAULTS)
    a, t = values["algo"], values["train"]

    K = a.get("k", 1 if algo in COMMUNICATIVE else 0)
    if K is None or K < 0:
        raise ConfigError(f"K must be a non-negative integer, got {K}", line_of("algo", "k"))
    if algo not in COMMUNICATIVE and K != 0:
        raise ConfigError(f"{algo} has no k-level reasoning; K must be 0", line_of("algo", "k"))
    cell = a.get("cell", defaults["cell"] if algo in COMMUNICATIVE else None)
    if algo not in COMMUNICATIVE:
        cell = None
    if cell is not None and cell not in ("gru", "vrnn"):
        raise ConfigError(f"cell must be gru or vrnn, got {cell!r}", line_of("algo", "cell"))
    if K > 0 and cell is None:
        raise ConfigError("K > 0 needs a communicative cell", line_of("algo", "cell"))

    cfg = RunConfig(
        env=EnvConfig(env_name, values["env"].get("n_agents"), values["env"].get("max_cycles"), params, t.get("seed", 0)),
        algo=algo,
        K=K,
        latent_size=a.get("latent_size", defaults["latent_size"]),
        lr=t.get("lr", defaults["lr"]),
        gamma=t.get("gamma", defaults["gamma"]),
        batch_size=t.get("batch_size", defaults["batch_size"]),
        max_grad_norm=t.get("max_grad_norm", defaults["max_grad_norm"]),
        epochs=t.get("epochs", defaults["epochs"]),
        beta=a.get("beta", defaults["beta"] if algo == "moa" else 0.0),
        cell=cell,
        hidden=a.get("hidden", 32),
        fusion=a.get("fusion", "mean"),
        action_mode=a.get("action_mode", "sample"),
        std=a.get("std", 0.2),
        latent_noise=a.get("latent_noise", 0.0),
        fraud_latents=params.get("fraud_latents") or "policy",
        fraud_noise=a.get("fraud_noise", 1.0),
        weights=a.get("weights", "td"),
        optimizer=a.get("optimizer", "adam"),
        seed=t.get("seed", 0),
        eval_episodes=t.get("eval_episodes", 100),
        early_stop=t.get("early_stop", False),
        timing=t.get("timing", False),
        source=text,
    )
    _validate(cfg, line_of)
    return cfg


def _validate(cfg: RunConfig, line_of):
    checks = [
        (cfg.latent_size is not None and cfg.latent_size >= 1, "latent_size must be >= 1", ("algo", "latent_size")),
        (cfg.hidden is not None and cfg.hidden >= 1, "hidden must be >= 1", ("algo", "hidden")),
        (cfg.lr is not None and cfg.lr > 0, "lr must be positive", ("train", "lr")),
        (cfg.gamma is not None and 0.0 <= cfg.gamma < 1.0, "gamma must lie in [0, 1)", ("train", "gamma")),
        (cfg.batch_size is not None and cfg.batch_size >= 1, "batch_size must be >= 1", ("train", "batch_size")),
        (cfg.max_grad_norm is not None and cfg.max_grad_norm > 0, "max_grad_norm must be positive", ("train", "max_grad_norm")),
        (cfg.epochs is not None and cfg.epochs >= 0, "epochs must be >= 0", ("train", "epochs")),
        (cfg.beta is not None and cfg.beta >= 0, "beta must be >= 0", ("algo", "beta")),
        (cfg.fusion in ("mean", "sequential"), "fusion must be mean or sequential", ("algo", "fusion")),
        (cfg.action_mode in ("sample", "map"), "action_mode must be sample or map", ("algo", "action_mode")),
        (cfg.std is not None and cfg.std > 0, "std must be positive", ("algo", "std")),
        (cfg.latent_noise is not None and cfg.latent_noise >= 0, "latent_noise must be >= 0", ("algo", "latent_noise")),
        (cfg.fraud_noise is not None and cfg.fraud_noise >= 0, "fraud_noise must be >= 0", ("algo", "fraud_noise")),
        (cfg.weights in ("td", "mc"), "weights must be td or mc", ("algo", "weights")),
        (cfg.optimizer in ("adam", "sgd"), "optimizer must be adam or sgd", ("algo", "optimizer")),
        (cfg.fraud_latents in ("policy", "noise"), "fraud_latents must be policy or noise", ("env", "fraud_latents")),
        (cfg.eval_episodes is not None and cfg.eval_episodes >= 1, "eval_episodes must be >= 1", ("train", "eval_episodes")),
        (cfg.env.max_cycles is None or cfg.env.max_cycles >= 1, "max_cycles must be >= 1", ("env", "max_cycles")),
    ]
    for ok, msg, (sec, key) in checks:
        if not ok:
            raise ConfigError(msg, line_of(sec, key))
    cls = ENVIRONMENTS[cfg.env.name]
    if getattr(cls, "continuous", False):
        if cfg.algo == "moa":
            raise ConfigError("MOA predicts discrete neighbor actions; not available for continuous environments")
        if cfg.fraud_index is not None:
            raise ConfigError("fraud wrapping needs a discrete environment")
    if cfg.fraud_index is not None:
        n = cfg.env.n_agents or getattr(cls, "n_agents", None) or 5
        if not 0 <= cfg.fraud_index < n:
            raise ConfigError(f"fraud index {cfg.fraud_index} outside [0, {n})", line_of("env", "fraud"))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
