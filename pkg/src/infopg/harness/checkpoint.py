"""Versioned checkpoints of every agent's named tensors (numpy ``.npz``).

Layout: ``format_version`` (int array), ``meta`` (JSON string describing the
architecture) and one array per tensor named ``agent{i}/{group}.{name}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ContractError
from ..policy import PolicyBundle

FORMAT_VERSION = 1


def architecture(bundles: list[PolicyBundle]) -> dict:
    b = bundles[0]
    return {
        "n_agents": len(bundles),
        "obs_dim": b.obs_dim,
        "n_outputs": b.n_outputs,
        "latent_size": b.latent_size,
        "hidden": b.encoder["W0"].shape[1],
        "cell": None if b.com is None else b.com.kind,
        "continuous": b.continuous,
        "std": b.std,
        "moa_slots": 0 if b.moa is None else b.moa["W0"].shape[1] // b.n_outputs,
        "frozen": [bool(x.frozen) for x in bundles],
    }


def save_checkpoint(path, bundles: list[PolicyBundle], extra: dict | None = None) -> Path:
    path = Path(path)
    arrays = {"format_version": np.array(FORMAT_VERSION)}
    meta = architecture(bundles)
    meta.update(extra or {})
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    for i, b in enumerate(bundles):
        for k, p in b.all_params().items():
            arrays[f"agent{i}/{k}"] = p.value
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict, list[dict[str, np.ndarray]]]:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ContractError(f"cannot read checkpoint {path}: {exc}") from None
    with data:
        if "format_version" not in data or int(data["format_version"]) != FORMAT_VERSION:
            raise ContractError(f"unsupported checkpoint format in {path}")
        meta = json.loads(str(data["meta"]))
        per_agent: list[dict[str, np.ndarray]] = [{} for _ in range(meta["n_agents"])]
        for key in data.files:
            if not key.startswith("agent"):
                continue
            head, name = key.split("/", 1)
            per_agent[int(head[5:])][name] = data[key].copy()
    return meta, per_agent


def restore(bundles: list[PolicyBundle], path) -> dict:
    """Load checkpoint tensors into ``bundles``; architecture must match."""
    meta, per_agent = load_checkpoint(path)
    want = architecture(bundles)
    for key in ("n_agents", "obs_dim", "n_outputs", "latent_size", "hidden", "cell", "continuous", "moa_slots"):
        if meta.get(key) != want[key]:
            raise ContractError(f"checkpoint {key}={meta.get(key)!r} does not match config {want[key]!r}")
    for b, arrays in zip(bundles, per_agent):
        b.load(arrays)
    return meta
