"""Gradient clipping and per-agent optimizers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


def global_norm(grads) -> float:
    values = grads.values() if isinstance(grads, dict) else grads
    return math.sqrt(float(np.sum([np.vdot(g, g) for g in values]))) if values else 0.0


def clip_global_norm(grads, cap: float):
    """Scale every gradient by cap/norm when the global L2 norm exceeds ``cap``.

    Accepts a dict or a list of arrays and returns the same container type.
    """
    if cap <= 0:
        raise ContractError("gradient cap must be positive")
    norm = global_norm(grads)
    if norm <= cap:
        return dict(grads) if isinstance(grads, dict) else list(grads)
    factor = cap / norm
    if isinstance(grads, dict):
        return {k: g * factor for k, g in grads.items()}
    return [g * factor for g in grads]


@dataclass
class OptimizerState:
    lr: float
    step: int = 0
    updates: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adaptive-moment optimizer with bias correction.

    An all-zero gradient map leaves parameters and moments untouched and only
    advances the step counter; a gated-out actor therefore stays bit-identical.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimizerState(lr)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
        st = self.state
        st.step += 1
        if set(params) != set(grads):
            raise ContractError("parameter and gradient names differ")
        for name, p in params.items():
            if grads[name].shape != p.value.shape:
                raise ContractError(f"gradient shape {grads[name].shape} != parameter shape {p.value.shape} for {name}")
        if not any(np.any(g) for g in grads.values()):
            return
        st.updates += 1
        t = st.updates
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = grads[name]
            m = st.first.get(name)
            v = st.second.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            st.first[name] = m
            st.second[name] = v
            p.value = p.value - st.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr: float):
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        self.state = OptimizerState(lr)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
        self.state.step += 1
        if set(params) != set(grads):
            raise ContractError("parameter and gradient names differ")
        for name, p in params.items():
            if grads[name].shape != p.value.shape:
                raise ContractError(f"gradient shape mismatch for {name}")
            p.value = p.value - self.state.lr * grads[name]


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ContractError(f"unknown optimizer {kind!r}")
