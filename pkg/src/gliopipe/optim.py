"""Adam optimizer with bias correction.

Constant learning rate, no schedule, no weight decay.
"""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor


class AdamState:
    """Per-parameter moment buffers plus the shared hyperparameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Apply one in-place Adam update from the accumulated gradients.

    Parameters with no gradient (or an all-zero gradient) are left untouched
    apart from the moment decay, matching the standard update.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        m = state.m.get(name)
        if m is None or m.shape != p.data.shape:
            raise ShapeError(f"Adam state for '{name}' does not match parameter shape {p.data.shape}")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(DTYPE)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
