"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs require gradients while
it is active.  Creation order is a valid topological order, so the backward
pass is a single reverse sweep.  A tape serves one training step and may be
swept only once.

Broadcasting is limited to what the models need: identical shapes, and an
operand whose shape is a suffix of the other's (scalars, bias rows, per-example
tensors replicated over Monte-Carlo samples).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Tape",
    "no_tape",
    "as_tensor",
    "custom_op",
    "add",
    "sub",
    "mul",
    "div",
    "negate",
    "scale",
    "square",
    "exp",
    "log",
    "sigmoid",
    "elu",
    "relu",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "logsumexp",
]

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operations for one backward sweep.

    Use as a context manager; operations executed inside are recorded.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._swept = False

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> None:
        self._nodes.append((out, parents, vjp))

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` wrt each source; unreached sources get zeros."""
        if self._swept:
            raise RuntimeError("tape already swept; record a fresh tape per step")
        if loss.data.shape != ():
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss is not connected to any tracked tensor")
        self._swept = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for out, parents, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._nodes.clear()
        return [np.broadcast_to(grads.get(id(s), 0.0), s.shape).astype(np.float64) for s in sources]


class no_tape:
    """Context manager that suspends recording."""

    def __enter__(self):
        self._saved = getattr(_state, "stack", [])
        _state.stack = []

    def __exit__(self, *exc):
        _state.stack = self._saved


def custom_op(value: np.ndarray, parents: Sequence, vjp: Callable) -> Tensor:
    """Wrap ``value`` as the output of an operation on ``parents``.

    ``vjp(g)`` must return one gradient (or None) per parent, already shaped
    like that parent.
    """
    parents = tuple(as_tensor(p) for p in parents)
    tape = _active_tape()
    tracked = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=tracked)
    if tracked:
        tape._record(out, parents, vjp)
    return out


def _broadcast_shapes(a: np.ndarray, b: np.ndarray) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long_[len(long_) - len(short) :] != short:
        raise ValueError(f"incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.data, b.data)
    return custom_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.data, b.data)
    return custom_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.data, b.data)
    return custom_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.data, b.data)
    out = a.data / b.data
    return custom_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def negate(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return custom_op(c * a.data, (a,), lambda g: (c * g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(~(a.data > 0)):
        raise ValueError("log of a non-positive value")
    return custom_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return custom_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a) -> Tensor:
    """ELU with unit scale: x for x > 0, exp(x) - 1 otherwise."""
    a = as_tensor(a)
    pos = a.data > 0
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    return custom_op(out, (a,), lambda g: (g * np.where(pos, 1.0, neg_part + 1.0),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return custom_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return custom_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        return custom_op(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    return custom_op(
        np.sum(a.data, axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),),
    )


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def logsumexp(a, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.squeeze(np.log(s) + m, axis=axis)
        weights = e / s
    return custom_op(out, (a,), lambda g: (np.expand_dims(g, axis) * weights,))
