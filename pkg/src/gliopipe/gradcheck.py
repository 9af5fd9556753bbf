"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import DTYPE, Tensor


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """Compare backward() gradients against central finite differences.

    ``f`` must be scalar-valued and deterministic. Returns the max relative
    error, with the denominator floored at 1 so near-zero gradients are
    compared absolutely.
    """
    x = Tensor(x.data.copy(), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    ref = float(out.data)
    out2 = f(Tensor(x.data.copy(), requires_grad=True))
    if float(out2.data) != ref:
        raise ValueError("grad_check requires a deterministic function")

    out.backward()
    g_ad = x.grad.astype(np.float64).reshape(-1)

    flat = x.data.reshape(-1)
    g_fd = np.zeros_like(g_ad)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = np.float32(orig + eps)
        f_plus = float(f(Tensor(x.data, requires_grad=False)).data)
        flat[i] = np.float32(orig - eps)
        f_minus = float(f(Tensor(x.data, requires_grad=False)).data)
        flat[i] = orig
        g_fd[i] = (f_plus - f_minus) / (np.float64(np.float32(orig + eps)) - np.float64(np.float32(orig - eps)))

    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1.0)
    return float(np.max(np.abs(g_ad - g_fd) / denom))


def grad_check_params(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-2,
) -> dict[str, float]:
    """Finite-difference check of gradients w.r.t. a dict of parameters.

    ``f`` re-runs the full forward pass (reading the current parameter data)
    and returns a scalar loss. Returns per-parameter max relative errors.
    """
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in params.items()}

    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g_ad = grads[name].astype(np.float64).reshape(-1)
        g_fd = np.zeros_like(g_ad)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = np.float32(orig + eps)
            f_plus = float(f().data)
            flat[i] = np.float32(orig - eps)
            f_minus = float(f().data)
            flat[i] = orig
            g_fd[i] = (f_plus - f_minus) / (
                np.float64(np.float32(orig + eps)) - np.float64(np.float32(orig - eps))
            )
        denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1.0)
        errors[name] = float(np.max(np.abs(g_ad - g_fd) / denom)) if flat.size else 0.0
    return errors
