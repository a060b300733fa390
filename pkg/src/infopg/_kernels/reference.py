"""Pure-numpy batched k-level inference over agent-stacked parameters.

Layout: arrays are indexed (agent, batch, feature) internally so that each
agent's weights multiply its own rows with one stacked ``matmul``.
"""

from __future__ import annotations

import numpy as np

CELL_NONE, CELL_GRU, CELL_VRNN = 0, 1, 2


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def k_level_infer(
    enc_w0, enc_b0, enc_w1, enc_b1,
    cell_kind, com_w, com_u, com_b,
    head_w, head_b,
    obs, mix, K, noise=None, override=None, override_mask=None,
):
    """Head outputs (B, N, A) and final latents (B, N, D) for observations (B, N, O)."""
    x = np.transpose(obs, (1, 0, 2))
    h = np.tanh(np.matmul(x, enc_w0) + enc_b0[:, None, :])
    lat = np.tanh(np.matmul(h, enc_w1) + enc_b1[:, None, :])
    if noise is not None:
        lat = lat + np.transpose(noise, (1, 0, 2))
    if override is not None:
        ov = np.transpose(override, (1, 0, 2))
        ov_mask = np.asarray(override_mask, dtype=bool)
    for _ in range(K):
        fused = np.einsum("ij,jbd->ibd", mix, lat)
        if override is not None:
            fused[ov_mask] = ov[ov_mask]
        if cell_kind == CELL_GRU:
            z = _sigmoid(np.matmul(fused, com_w[:, 0]) + np.matmul(lat, com_u[:, 0]) + com_b[:, 0, None, :])
            r = _sigmoid(np.matmul(fused, com_w[:, 1]) + np.matmul(lat, com_u[:, 1]) + com_b[:, 1, None, :])
            cand = np.tanh(np.matmul(fused, com_w[:, 2]) + np.matmul(r * lat, com_u[:, 2]) + com_b[:, 2, None, :])
            lat = lat + z * (cand - lat)
        elif cell_kind == CELL_VRNN:
            lat = np.tanh(np.matmul(lat, com_u[:, 0]) + np.matmul(fused, com_w[:, 0]) + com_b[:, 0, None, :])
        else:
            raise ValueError("K > 0 needs a communicative cell")
    out = np.matmul(lat, head_w) + head_b[:, None, :]
    return np.transpose(out, (1, 0, 2)).copy(), np.transpose(lat, (1, 0, 2)).copy()
