"""Rollout inference kernels.

The compiled extension ``_kinfer`` is used when it was built; otherwise the
numpy implementation in :mod:`.reference` is selected.  Setting the
environment variable ``INFOPG_KERNEL=python`` forces the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import reference
from .reference import CELL_GRU, CELL_NONE, CELL_VRNN

BACKEND = "python"
_impl = reference.k_level_infer

if os.environ.get("INFOPG_KERNEL", "").lower() != "python":
    try:
        from . import _kinfer  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        _impl = _kinfer.k_level_infer
        BACKEND = "cython"

_CELL_CODES = {None: CELL_NONE, "gru": CELL_GRU, "vrnn": CELL_VRNN}


@dataclass
class PackedPolicies:
    """Agent-stacked copies of every actor tensor the inference path reads."""

    enc_w0: np.ndarray
    enc_b0: np.ndarray
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    cell_kind: int
    com_w: np.ndarray
    com_u: np.ndarray
    com_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray


def pack(bundles) -> PackedPolicies:
    kinds = {None if b.com is None else b.com.kind for b in bundles}
    if len(kinds) != 1:
        raise ValueError("all agents must share one communicative cell kind")
    kind = kinds.pop()
    for b in bundles:
        if b.encoder.n_layers != 2 or b.head.n_layers != 1:
            raise ValueError("packed inference expects a 2-layer encoder and a linear head")

    def stack(get):
        return np.ascontiguousarray(np.stack([get(b) for b in bundles]), dtype=np.float64)

    d = bundles[0].latent_size
    if kind == "gru":
        com_w = stack(lambda b: np.stack([b.com[f"W_{g}"].value for g in "zrh"]))
        com_u = stack(lambda b: np.stack([b.com[f"U_{g}"].value for g in "zrh"]))
        com_b = stack(lambda b: np.stack([b.com[f"b_{g}"].value for g in "zrh"]))
    elif kind == "vrnn":
        com_w = stack(lambda b: b.com["W_ih"].value[None])
        com_u = stack(lambda b: b.com["W_hh"].value[None])
        com_b = stack(lambda b: b.com["b"].value[None])
    else:
        n = len(bundles)
        com_w = np.zeros((n, 1, d, d))
        com_u = np.zeros((n, 1, d, d))
        com_b = np.zeros((n, 1, d))
    return PackedPolicies(
        stack(lambda b: b.encoder["W0"].value),
        stack(lambda b: b.encoder["b0"].value),
        stack(lambda b: b.encoder["W1"].value),
        stack(lambda b: b.encoder["b1"].value),
        _CELL_CODES[kind],
        com_w,
        com_u,
        com_b,
        stack(lambda b: b.head["W0"].value),
        stack(lambda b: b.head["b0"].value),
    )


def k_level_infer(packed: PackedPolicies, obs, mix, K: int, noise=None, override=None, override_mask=None, impl=None):
    """Head outputs (B, N, A) and final latents (B, N, D) without recording a graph."""
    fn = impl or _impl
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    mix = np.ascontiguousarray(mix, dtype=np.float64)
    return fn(
        packed.enc_w0, packed.enc_b0, packed.enc_w1, packed.enc_b1,
        packed.cell_kind, packed.com_w, packed.com_u, packed.com_b,
        packed.head_w, packed.head_b,
        obs, mix, int(K), noise, override, override_mask,
    )
