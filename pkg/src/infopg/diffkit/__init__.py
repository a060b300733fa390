"""Reverse-mode autodiff kernel, network cells and optimizers."""

from . import tensor
from .cells import (
    CellParams,
    cell_step,
    glorot,
    gru_step,
    init_gru,
    init_mlp,
    init_vrnn,
    mlp_forward,
    vrnn_step,
)
from .optim import SGD, Adam, OptimizerState, clip_global_norm, global_norm, make_optimizer
from .tensor import (
    Tape,
    Tensor,
    add,
    add_bias,
    detach,
    elementwise,
    log_softmax,
    matmul,
    parameter,
    softmax,
)


def backward(tape: Tape, root: Tensor):
    """Gradient map {parameter tensor: gradient} of a scalar root."""
    return tape.backward(root)


__all__ = [
    "Adam",
    "CellParams",
    "OptimizerState",
    "SGD",
    "Tape",
    "Tensor",
    "add",
    "add_bias",
    "backward",
    "cell_step",
    "clip_global_norm",
    "detach",
    "elementwise",
    "global_norm",
    "glorot",
    "gru_step",
    "init_gru",
    "init_mlp",
    "init_vrnn",
    "log_softmax",
    "make_optimizer",
    "matmul",
    "mlp_forward",
    "parameter",
    "softmax",
    "tensor",
    "vrnn_step",
]
