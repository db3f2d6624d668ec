"""Adam with bias correction.

Updates descend the gradient they are given; the trainer feeds gradients of
the negated bound, so the bound itself is ascended.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "NonFiniteGradientError", "adam_step"]


class NonFiniteGradientError(FloatingPointError):
    """A gradient held NaN or infinity; the step was not applied."""

    def __init__(self, blocks: list[int]):
        self.blocks = blocks
        super().__init__(f"non-finite gradient in parameter block(s) {blocks}")


def _array(p) -> np.ndarray:
    # ndarrays also have a .data attribute (their raw buffer), so test the type
    return p if isinstance(p, np.ndarray) else p.data


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(cls, params, lr: float, **kwargs) -> "AdamState":
        shapes = [np.shape(_array(p)) for p in params]
        return cls(lr=lr, m=[np.zeros(s) for s in shapes], v=[np.zeros(s) for s in shapes], **kwargs)


def adam_step(state: AdamState, params, grads):
    """Apply one Adam update in place to ``params`` (Tensors or arrays).

    Raises :class:`NonFiniteGradientError` before touching anything if a
    gradient is not finite.
    """
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("params, grads and optimizer moments differ in count")
    bad = [i for i, g in enumerate(grads) if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    if state.max_grad_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > state.max_grad_norm:
            grads = [g * (state.max_grad_norm / norm) for g in grads]

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != np.shape(g):
            raise ValueError("gradient shape does not match its parameter")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        _array(p)[...] -= update
    return params, state
