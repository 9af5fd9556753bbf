"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Data is float32, row-major, backed by numpy. A Tensor records its parents and
a backward closure on the tape; calling ``backward()`` on a scalar walks the
tape in reverse topological order and accumulates gradients into every
reachable tensor with ``requires_grad`` set. Gradients accumulate across calls
until explicitly zeroed.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "conv2d",
    "batch_norm2d",
    "relu",
    "max_pool2d",
    "avg_pool2d",
    "global_avg_pool",
    "linear",
    "softmax",
    "log_softmax",
    "cross_entropy_loss",
    "concat_channels",
]

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


def _as_array(data, dtype=DTYPE) -> np.ndarray:
    return np.asarray(data, dtype=dtype)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None,
                 dtype=DTYPE):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward
        self._consumed = False

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    # ---- graph plumbing ------------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(DTYPE).copy()
        else:
            self.grad += g.astype(DTYPE)

    def detach(self) -> "Tensor":
        """Return a view of the data cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this scalar through the recorded computation."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar tensor, got shape {self.data.shape}"
            )
        if self._consumed:
            raise RuntimeError(
                "backward() called twice on the same recorded computation; "
                "re-run the forward pass first"
            )
        self._consumed = True
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # the tape is single-use: free the closure so a second
                # backward() without re-recording fails loudly
                node._backward = None
                node._parents = ()

    # ---- elementwise arithmetic ---------------------------------------------

    def _needs_tape(self, *others: "Tensor") -> bool:
        return any(
            t.requires_grad or t._backward is not None for t in (self, *others)
        )

    def __add__(self, other: "Tensor") -> "Tensor":
        other = _ensure_tensor(other)
        a, b = self, other
        out_data = a.data + b.data

        def bwd(g):
            if a.requires_grad or a._backward is not None:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._backward is not None:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor(out_data, _parents=(a, b), _backward=bwd if a._needs_tape(b) else None)

    def __mul__(self, other: "Tensor") -> "Tensor":
        other = _ensure_tensor(other)
        a, b = self, other
        out_data = a.data * b.data

        def bwd(g):
            if a.requires_grad or a._backward is not None:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad or b._backward is not None:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor(out_data, _parents=(a, b), _backward=bwd if a._needs_tape(b) else None)

    def __neg__(self) -> "Tensor":
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor(-a.data, _parents=(a,), _backward=bwd if a._needs_tape() else None)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self + (-_ensure_tensor(other))

    def sum(self) -> "Tensor":
        a = self

        def bwd(g):
            a._accumulate(np.full_like(a.data, float(g)))

        # scalar reductions stay in 64-bit so finite differences cancel exactly
        return Tensor(a.data.sum(dtype=np.float64), _parents=(a,),
                      _backward=bwd if a._needs_tape() else None, dtype=np.float64)

    def mean(self) -> "Tensor":
        a = self
        n = a.data.size

        def bwd(g):
            a._accumulate(np.full_like(a.data, float(g) / n))

        return Tensor(a.data.mean(dtype=np.float64), _parents=(a,),
                      _backward=bwd if a._needs_tape() else None, dtype=np.float64)

    def reshape(self, *shape) -> "Tensor":
        a = self
        out_data = a.data.reshape(*shape)

        def bwd(g):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor(out_data, _parents=(a,), _backward=bwd if a._needs_tape() else None)


def _ensure_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DTYPE))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(DTYPE)


def _tape(out_data, parents, bwd) -> Tensor:
    needed = any(p.requires_grad or p._backward is not None for p in parents)
    return Tensor(out_data, _parents=parents, _backward=bwd if needed else None)


# ---- activations -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        x._accumulate(g * mask)

    return _tape(np.where(mask, x.data, 0.0), (x,), bwd)


# ---- convolution -------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Return windows of shape (N, C, kh, kw, Hout, Wout) plus the padded array."""
    n, c, h, w = x.shape
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, hout, wout),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return windows, x, hout, wout


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation: input NCHW, weight OIHW, no bias."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has {c} channels, "
            f"weight {weight.shape} expects {i}"
        )
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )

    windows, _, hout, wout = _im2col(x.data, kh, kw, stride, padding)
    cols = np.ascontiguousarray(windows).reshape(n, c * kh * kw, hout * wout)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cols).reshape(n, o, hout, wout)

    def bwd(g):
        gmat = g.reshape(n, o, hout * wout)
        if weight.requires_grad or weight._backward is not None:
            gw = np.einsum("nop,nkp->ok", gmat, cols, optimize=True)
            weight._accumulate(gw.reshape(o, i, kh, kw))
        if x.requires_grad or x._backward is not None:
            # scatter dcols back through the im2col windows
            dcols = np.matmul(wmat.T, gmat).reshape(n, c, kh, kw, hout, wout)
            hp, wp = h + 2 * padding, w + 2 * padding
            dx_pad = np.zeros((n, c, hp, wp), dtype=DTYPE)
            for a in range(kh):
                for b in range(kw):
                    dx_pad[:, :, a : a + stride * hout : stride,
                           b : b + stride * wout : stride] += dcols[:, :, a, b]
            if padding > 0:
                dx = dx_pad[:, :, padding:-padding, padding:-padding]
            else:
                dx = dx_pad
            x._accumulate(dx)

    return _tape(out.astype(DTYPE), (x, weight), bwd)


# ---- pooling -----------------------------------------------------------------


def max_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    n, c, h, w = x.shape
    # pad with -inf so padded cells never win the max
    padded = np.pad(
        x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=-np.inf,
    )
    hp, wp = padded.shape[2], padded.shape[3]
    hout = (hp - kernel) // stride + 1
    wout = (wp - kernel) // stride + 1
    sn, sc, sh, sw = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, kernel, kernel, hout, wout),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    flat = np.ascontiguousarray(windows).reshape(n, c, kernel * kernel, hout, wout)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def bwd(g):
        hp, wp = h + 2 * padding, w + 2 * padding
        dx_pad = np.zeros((n, c, hp, wp), dtype=DTYPE)
        ka, kb = np.divmod(arg, kernel)
        oy, ox = np.meshgrid(np.arange(hout), np.arange(wout), indexing="ij")
        rows = ka + oy * stride
        cols_ = kb + ox * stride
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dx_pad, (ni, ci, rows, cols_), g)
        if padding > 0:
            dx_pad = dx_pad[:, :, padding:-padding, padding:-padding]
        x._accumulate(dx_pad)

    return _tape(out.astype(DTYPE), (x,), bwd)


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Non-overlapping-window mean; partial border windows are dropped."""
    if stride is None:
        stride = kernel
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"avg_pool2d kernel {kernel} exceeds spatial dims {h}x{w}")
    windows, _, hout, wout = _im2col(x.data, kernel, kernel, stride, 0)
    out = windows.mean(axis=(2, 3))

    def bwd(g):
        dx = np.zeros((n, c, h, w), dtype=DTYPE)
        scale = 1.0 / (kernel * kernel)
        for a in range(kernel):
            for b in range(kernel):
                dx[:, :, a : a + stride * hout : stride,
                   b : b + stride * wout : stride] += g * scale
        x._accumulate(dx)

    return _tape(out.astype(DTYPE), (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean over H and W, returning N x C."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g):
        dx = np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w))
        x._accumulate(dx.astype(DTYPE))

    return _tape(out.astype(DTYPE), (x,), bwd)


# ---- batch norm --------------------------------------------------------------


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with batch statistics and updates
    running_mean/running_var in place; eval mode uses the running stats.
    """
    n, c, h, w = x.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batch_norm2d gamma/beta shape {gamma.data.shape}/{beta.data.shape} "
            f"does not match {c} channels"
        )
    if training:
        m = n * h * w
        if m <= 1:
            raise ShapeError(
                "batch_norm2d: training-mode batch with a single value per channel "
                "has degenerate variance"
            )
        mean = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.data.var(axis=(0, 2, 3), dtype=np.float64)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(DTYPE)
        # unbiased variance for the running estimate, biased for normalization
        running_var *= 1.0 - momentum
        running_var += momentum * (var * m / (m - 1)).astype(DTYPE)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(DTYPE)
    mean32 = mean.astype(DTYPE)
    xhat = (x.data - mean32[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bwd(g):
        if gamma.requires_grad or gamma._backward is not None:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE))
        if beta.requires_grad or beta._backward is not None:
            beta._accumulate(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE))
        if x.requires_grad or x._backward is not None:
            gx_hat = g * gamma.data[None, :, None, None]
            if training:
                m = n * h * w
                sum_g = gx_hat.sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
                sum_gx = (gx_hat * xhat).sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
                dx = (
                    inv_std[None, :, None, None]
                    * (gx_hat - sum_g / m - xhat * (sum_gx / m))
                )
                x._accumulate(dx.astype(DTYPE))
            else:
                x._accumulate((gx_hat * inv_std[None, :, None, None]).astype(DTYPE))

    return _tape(out.astype(DTYPE), (x, gamma, beta), bwd)


# ---- linear / classifier head ------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x (N x F) @ weight (F x K) + bias (K)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-d input and weight, got {x.shape}, {weight.shape}")
    n, f = x.shape
    f2, k = weight.shape
    if f != f2:
        raise ShapeError(f"linear feature mismatch: input {x.shape} vs weight {weight.shape}")
    if bias.data.shape != (k,):
        raise ShapeError(f"linear bias shape {bias.data.shape} does not match {k} outputs")
    out = x.data @ weight.data + bias.data

    def bwd(g):
        if x.requires_grad or x._backward is not None:
            x._accumulate(g @ weight.data.T)
        if weight.requires_grad or weight._backward is not None:
            weight._accumulate(x.data.T @ g)
        if bias.requires_grad or bias._backward is not None:
            bias._accumulate(g.sum(axis=0))

    return _tape(out, (x, weight, bias), bwd)


# ---- softmax / loss ----------------------------------------------------------


def _log_softmax_data(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax expects N x K with K >= 2, got {logits.shape}")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("softmax: non-finite logits")
    p = np.exp(_log_softmax_data(logits.data))

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        logits._accumulate((p * (g - dot)).astype(DTYPE))

    return _tape(p.astype(DTYPE), (logits,), bwd)


def log_softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 2:
        raise ShapeError(f"log_softmax expects N x K, got {logits.shape}")
    out = _log_softmax_data(logits.data)
    p = np.exp(out)

    def bwd(g):
        logits._accumulate((g - p * g.sum(axis=1, keepdims=True)).astype(DTYPE))

    return _tape(out.astype(DTYPE), (logits,), bwd)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k}): {labels}")
    logp = _log_softmax_data(logits.data)
    loss = -logp[np.arange(n), labels].mean(dtype=np.float64)
    p = np.exp(logp)

    def bwd(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        logits._accumulate((float(g) / n * d).astype(DTYPE))

    needed = logits.requires_grad or logits._backward is not None
    return Tensor(np.float64(loss), _parents=(logits,),
                  _backward=bwd if needed else None, dtype=np.float64)


# ---- structural ops ----------------------------------------------------------


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    shapes = {(t.shape[0],) + t.shape[2:] for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"concat_channels: incompatible shapes {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bwd(g):
        for t, gi in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad or t._backward is not None:
                t._accumulate(gi)

    return _tape(out, tuple(tensors), bwd)
