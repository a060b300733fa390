"""Network cells: feed-forward stack, gated recurrent cell, vanilla recurrent cell.

Weights are stored as (fan_in, fan_out) so that a row batch ``x`` maps as
``x @ W``.  All cells accept a single vector (D,) or a row batch (B, D).

Gated recurrent convention::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    hc = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * hc
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor, parameter

VRNN_EPS = 1e-3


@dataclass
class CellParams:
    kind: str
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def named(self):
        return self.tensors.items()

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.tensors if k.startswith("W"))

    def copy(self) -> CellParams:
        return CellParams(self.kind, {k: parameter(v.value.copy(), k) for k, v in self.tensors.items()})


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(sizes: list[int], rng: np.random.Generator) -> CellParams:
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least input and output widths")
    params = CellParams("mlp")
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params.tensors[f"W{i}"] = parameter(glorot(rng, a, b), f"W{i}")
        params.tensors[f"b{i}"] = parameter(np.zeros(b), f"b{i}")
    return params


def mlp_forward(params: CellParams, x, activation: str = "tanh") -> Tensor:
    """Affine layers with ``activation`` in between; the last layer stays linear."""
    x = T.as_tensor(x)
    n = params.n_layers
    w0 = params["W0"]
    if x.shape[-1] != w0.shape[0]:
        raise DimensionError(f"input width {x.shape[-1]} does not match first layer {w0.shape[0]}")
    act = {"tanh": T.tanh, "relu": T.relu, "sigmoid": T.sigmoid}[activation]
    h = x
    for i in range(n):
        h = T.add_bias(T.matmul(h, params[f"W{i}"]), params[f"b{i}"])
        if i < n - 1:
            h = act(h)
    return h


def init_gru(width: int, rng: np.random.Generator) -> CellParams:
    params = CellParams("gru")
    for gate in ("z", "r", "h"):
        params.tensors[f"W_{gate}"] = parameter(glorot(rng, width, width), f"W_{gate}")
        params.tensors[f"U_{gate}"] = parameter(glorot(rng, width, width), f"U_{gate}")
        params.tensors[f"b_{gate}"] = parameter(np.zeros(width), f"b_{gate}")
    return params


def _check_widths(params_width: int, h, x):
    if h.shape[-1] != params_width or x.shape[-1] != params_width or h.shape != x.shape:
        raise DimensionError(f"cell width {params_width}: got h {h.shape}, x {x.shape}")


def gru_step(params: CellParams, h, x) -> Tensor:
    h, x = T.as_tensor(h), T.as_tensor(x)
    _check_widths(params["W_z"].shape[0], h, x)

    def gate(name, hidden):
        pre = T.add(T.matmul(x, params[f"W_{name}"]), T.matmul(hidden, params[f"U_{name}"]))
        return T.add_bias(pre, params[f"b_{name}"])

    z = T.sigmoid(gate("z", h))
    r = T.sigmoid(gate("r", h))
    cand = T.tanh(gate("h", T.mul(r, h)))
    return T.add(h, T.mul(z, T.sub(cand, h)))


def init_vrnn(width: int, eps: float = VRNN_EPS) -> CellParams:
    """Identity on the hidden matrix, small constant everywhere else."""
    params = CellParams("vrnn")
    params.tensors["W_hh"] = parameter(np.eye(width), "W_hh")
    params.tensors["W_ih"] = parameter(np.full((width, width), eps), "W_ih")
    params.tensors["b"] = parameter(np.full(width, eps), "b")
    return params


def vrnn_step(params: CellParams, h, x) -> Tensor:
    h, x = T.as_tensor(h), T.as_tensor(x)
    _check_widths(params["W_hh"].shape[0], h, x)
    pre = T.add(T.matmul(h, params["W_hh"]), T.matmul(x, params["W_ih"]))
    return T.tanh(T.add_bias(pre, params["b"]))


def cell_step(params: CellParams, h, x) -> Tensor:
    if params.kind == "gru":
        return gru_step(params, h, x)
    if params.kind == "vrnn":
        return vrnn_step(params, h, x)
    raise ValueError(f"not a recurrent cell: {params.kind}")
