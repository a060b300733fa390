"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` is the computation graph: an ordered list of nodes, each
holding its parents and a local gradient rule.  Operations record onto the
innermost active tape (``with Tape() as tape:``).  Outside any tape the same
operations run in inference mode and return constants.

Learnable parameters are tensors with ``requires_grad=True`` and no node; a
tape registers them as leaves the first time they are used.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, DomainError, NumericError, StaleGraphError

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array, optionally attached to a tape node."""

    __slots__ = ("value", "requires_grad", "node", "tape", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else _not_scalar(self.shape)

    def __repr__(self) -> str:
        tag = f" node={self.node}" if self.node is not None else ""
        if self.requires_grad and self.node is None:
            tag = " param"
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "parents", "value", "rule")

    def __init__(self, kind, parents, value, rule):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.rule = rule


class Tape:
    """Computation graph recording operations in topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaf_of: dict[int, int] = {}
        self._params: dict[int, Tensor] = {}
        self.released = False

    def __enter__(self) -> Tape:
        if self.released:
            raise StaleGraphError("cannot re-enter a released tape")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, param: Tensor) -> int:
        key = id(param)
        idx = self._leaf_of.get(key)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(_Node("leaf", (), param.value, None))
            self._leaf_of[key] = idx
            self._params[idx] = param
        return idx

    def _parent_index(self, t: Tensor) -> int | None:
        if t.tape is not None:
            if t.tape.released:
                raise StaleGraphError("tensor belongs to a released computation graph")
            if t.tape is not self:
                raise ContractError("tensor recorded on a different tape")
            return t.node
        if t.requires_grad:
            return self.leaf(t)
        return None

    def record(self, kind: str, value: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
        parents = tuple(self._parent_index(t) for t in inputs)
        out = Tensor.__new__(Tensor)
        out.value = value
        out.requires_grad = False
        out.name = None
        if all(p is None for p in parents):
            out.node = None
            out.tape = None
            return out
        out.node = len(self.nodes)
        out.tape = self
        self.nodes.append(_Node(kind, parents, value, rule))
        return out

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(root)/d(leaf) for every parameter leaf on this tape.

        Leaves the root does not reach get zero gradients.
        """
        if self.released:
            raise StaleGraphError("backward on a released tape")
        if root.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        grads: list = [None] * len(self.nodes)
        if root.tape is self and root.node is not None:
            grads[root.node] = np.ones_like(root.value)
            for idx in range(root.node, -1, -1):
                g = grads[idx]
                if g is None:
                    continue
                node = self.nodes[idx]
                if node.rule is None:
                    continue
                parent_grads = node.rule(g)
                for p, pg in zip(node.parents, parent_grads):
                    if p is None or pg is None:
                        continue
                    if grads[p] is None:
                        grads[p] = pg
                    else:
                        grads[p] = grads[p] + pg
        elif root.tape is not None:
            raise ContractError("root tensor is not recorded on this tape")
        out = {}
        for idx, param in self._params.items():
            g = grads[idx]
            out[param] = np.zeros_like(param.value) if g is None else g
        return out

    def gradients(self, root: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of ``root`` aligned with ``params``; zeros where unreached."""
        table = self.backward(root)
        return [table.get(p, np.zeros_like(p.value)) for p in params]

    def release(self):
        self.nodes = []
        self._leaf_of.clear()
        self._params.clear()
        self.released = True


def _check_live(t: Tensor):
    if t.tape is not None and t.tape.released:
        raise StaleGraphError("tensor belongs to a released computation graph")


def _check_finite(*arrays):
    for a in arrays:
        if np.isnan(a).any():
            raise NumericError("NaN in operation input")


def _apply(kind: str, value: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    for t in inputs:
        _check_live(t)
    tape = active_tape()
    if tape is None or not any(t.requires_grad or t.tape is not None for t in inputs):
        out = Tensor.__new__(Tensor)
        out.value = value
        out.requires_grad = False
        out.node = None
        out.tape = None
        out.name = None
        return out
    return tape.record(kind, value, inputs, rule)


# ---------------------------------------------------------------------------
# operations


def matmul(a, b) -> Tensor:
    """Matrix product; ``a`` may be a vector (k,) or matrix (m, k), ``b`` is (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    _check_finite(av, bv)
    out = av @ bv

    def rule(g):
        ga = g @ bv.T
        gb = np.outer(av, g) if av.ndim == 1 else av.T @ g
        return ga, gb

    return _apply("matmul", out, (a, b), rule)


def _binary_shapes(av, bv, kind):
    if av.shape == bv.shape or av.size == 1 and av.ndim == 0 or bv.size == 1 and bv.ndim == 0:
        return
    raise DimensionError(f"{kind} shape mismatch: {av.shape} vs {bv.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a.value, b.value, "add")
    _check_finite(a.value, b.value)
    sa, sb = a.shape, b.shape
    return _apply("add", a.value + b.value, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a.value, b.value, "sub")
    _check_finite(a.value, b.value)
    sa, sb = a.shape, b.shape
    return _apply("sub", a.value - b.value, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    _binary_shapes(av, bv, "mul")
    _check_finite(av, bv)
    sa, sb = a.shape, b.shape
    return _apply("mul", av * bv, (a, b), lambda g: (_reduce_to(g * bv, sa), _reduce_to(g * av, sb)))


def scale(x, c: float) -> Tensor:
    """Multiply by a Python constant."""
    x = as_tensor(x)
    _check_finite(x.value)
    c = float(c)
    return _apply("scale", x.value * c, (x,), lambda g: (g * c,))


def add_bias(x, b) -> Tensor:
    """Add a bias vector (n,) along the last axis of ``x`` (..., n)."""
    x, b = as_tensor(x), as_tensor(b)
    if b.value.ndim != 1 or x.value.shape[-1:] != b.value.shape:
        raise DimensionError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    _check_finite(x.value, b.value)
    n = b.value.shape[0]
    return _apply("add_bias", x.value + b.value, (x, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.value)
    y = np.tanh(x.value)
    return _apply("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.value)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _apply("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.value)
    mask = x.value > 0
    return _apply("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def log(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.value)
    if (x.value <= 0).any():
        raise DomainError("log of non-positive value")
    xv = x.value
    return _apply("log", np.log(xv), (x,), lambda g: (g / xv,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.value)
    y = np.exp(x.value)
    return _apply("exp", y, (x,), lambda g: (g * y,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "log": log, "exp": exp}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(x, kind: str, y=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if kind in _UNARY:
        return _UNARY[kind](x)
    if kind in _BINARY:
        if y is None:
            raise ContractError(f"{kind} needs two operands")
        return _BINARY[kind](x, y)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    return _apply("sum", np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_last(x) -> Tensor:
    """Sum over the last axis."""
    x = as_tensor(x)
    shape = x.shape
    return _apply("sum_last", x.value.sum(axis=-1), (x,), lambda g: (np.broadcast_to(g[..., None], shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return _apply("mean", np.asarray(x.value.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def _finite_input(xv):
    if not np.isfinite(xv).all():
        raise NumericError("non-finite softmax input")


def softmax(x) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    x = as_tensor(x)
    xv = x.value
    if xv.ndim == 0 or xv.shape[-1] < 1:
        raise DimensionError("softmax needs at least one entry")
    _finite_input(xv)
    e = np.exp(xv - xv.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _apply("softmax", y, (x,), rule)


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    _finite_input(xv)
    shifted = xv - xv.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def rule(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _apply("log_softmax", y, (x,), rule)


def pick(x, index) -> Tensor:
    """Select one entry per row: ``x[r, index[r]]``; for a vector, ``x[index]``."""
    x = as_tensor(x)
    xv = x.value
    if xv.ndim == 1:
        i = int(index)
        shape = xv.shape

        def rule1(g):
            out = np.zeros(shape)
            out[i] = g
            return (out,)

        return _apply("pick", np.asarray(xv[i]), (x,), rule1)
    idx = np.asarray(index, dtype=np.int64)
    if xv.ndim != 2 or idx.shape != (xv.shape[0],):
        raise DimensionError(f"pick shape mismatch: {xv.shape} with index {idx.shape}")
    rows = np.arange(xv.shape[0])
    shape = xv.shape

    def rule(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return _apply("pick", xv[rows, idx], (x,), rule)


def clamp_min(x, floor: float) -> Tensor:
    """Elementwise max(x, floor); no gradient flows through clamped entries."""
    x = as_tensor(x)
    _check_finite(x.value)
    keep = x.value >= floor
    return _apply("clamp_min", np.where(keep, x.value, floor), (x,), lambda g: (g * keep,))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _apply("concat", out, parts, rule)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    x = as_tensor(x)
    xv = x.value
    if not 0 <= start < stop <= xv.shape[-1]:
        raise DimensionError(f"slice [{start}, {stop}) outside last axis of {xv.shape}")
    shape = xv.shape

    def rule(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _apply("slice_last", xv[..., start:stop].copy(), (x,), rule)


def mean_of(tensors: Sequence) -> Tensor:
    """Arithmetic mean of equally shaped tensors.

    Each coordinate is summed in sorted order, so the result is bit-identical
    under any permutation of the inputs.
    """
    if not tensors:
        raise ContractError("mean_of needs at least one tensor")
    ts = [as_tensor(t) for t in tensors]
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape:
            raise DimensionError(f"mean_of: shapes {shape} and {t.shape} differ")
    stacked = np.stack([t.value for t in ts])
    _check_finite(stacked)
    n = len(ts)
    value = np.sort(stacked, axis=0).sum(axis=0) / n
    return _apply("mean_of", value, tuple(ts), lambda g: tuple(g / n for _ in range(n)))


def detach(x) -> Tensor:
    x = as_tensor(x)
    _check_live(x)
    return Tensor(x.value)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)
