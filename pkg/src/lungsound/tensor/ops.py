"""Differentiable operations.

Image tensors are channels-last: (batch, height, width, channels).
Each op computes its forward result with numpy and registers a closure
that maps the output gradient to one gradient per input.
"""
from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor, record


def _scalar_or_tensor(x, like: Tensor):
    if isinstance(x, Tensor):
        if x.shape != like.shape:
            raise ValueError(f"shape mismatch {x.shape} vs {like.shape}; no broadcasting")
        return x
    return None


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    other = _scalar_or_tensor(b, a)
    if other is None:
        return record(a.data + a.data.dtype.type(b), [a], lambda g: (g,))
    return record(a.data + other.data, [a, other], lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        return add(mul(b, -1.0), a)
    other = _scalar_or_tensor(b, a)
    if other is None:
        return record(a.data - a.data.dtype.type(b), [a], lambda g: (g,))
    return record(a.data - other.data, [a, other], lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    other = _scalar_or_tensor(b, a)
    if other is None:
        c = a.data.dtype.type(b)
        return record(a.data * c, [a], lambda g: (g * c,))
    return record(a.data * other.data, [a, other], lambda g: (g * other.data, g * a.data))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record(y, [x], lambda g: (g * y,))


def square(x: Tensor) -> Tensor:
    return record(x.data * x.data, [x], lambda g: (2 * g * x.data,))


def sum(x: Tensor) -> Tensor:
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    return record(total, [x], lambda g: (np.broadcast_to(g, x.shape),))


def reshape(x: Tensor, shape) -> Tensor:
    return record(x.data.reshape(shape), [x], lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(x.data * mask, [x], lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split on sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)
    return record(y, [x], lambda g: (g * y * (1 - y),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-p) during training."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return record(x.data * keep, [x], lambda g: (g * keep,))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (N, F) @ w (F, M) + b (M)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense: cannot apply {w.shape} weights to {x.shape} input")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def backward(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0, dtype=np.float64)

    parents = [x, w] if b is None else [x, w, b]
    return record(y, parents, backward)


def _pad_hw(a: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return a
    return np.pad(a, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N,H,W,Cin) with w (k,k,Cin,Cout).

    Output is (N, (H+2p-k)//s + 1, (W+2p-k)//s + 1, Cout). With the
    defaults this is the 'valid', stride-1 convolution.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects x (N,H,W,C) and w (k,k,Cin,Cout)")
    k, k2, cin, cout = w.shape
    n, h, wd, c = x.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if c != cin:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if k > hp or k > wp:
        raise ValueError(f"kernel {k}x{k} larger than input {hp}x{wp}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1

    xp = _pad_hw(x.data, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N,ho,wo,C,k,k) -> rows of (C,k,k) patches
    cols = win.reshape(n * ho * wo, c * k * k)
    wmat = w.data.transpose(2, 0, 1, 3).reshape(c * k * k, cout)
    y = cols @ wmat
    if b is not None:
        y = y + b.data
    y = y.reshape(n, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(c, k, k, cout).transpose(1, 2, 0, 3)
        gcols = (g2 @ wmat.T).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[..., i, j]
        gx = gxp[:, padding : padding + h, padding : padding + wd, :] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0, dtype=np.float64)

    parents = [x, w] if b is None else [x, w, b]
    return record(y, parents, backward)


def maxpool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling; trailing rows/columns that don't fill a window are dropped.

    Ties route the gradient to the first element of the window in row-major order.
    """
    n, h, w, c = x.shape
    if size < 1 or size > h or size > w:
        raise ValueError(f"pool size {size} does not fit a {h}x{w} input")
    ho, wo = h // size, w // size
    blocks = x.data[:, : ho * size, : wo * size, :].reshape(n, ho, size, wo, size, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, : ho * size, : wo * size, :] = gb.reshape(n, ho * size, wo * size, c)
        return (gx,)

    return record(y, [x], backward)


def upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of (N,H,W,C) by an integer factor."""
    y = x.data.repeat(factor, axis=1).repeat(factor, axis=2)
    n, h, w, c = x.shape

    def backward(g):
        return (g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return record(y, [x], backward)


def crop_or_pad(x: Tensor, height: int, width: int) -> Tensor:
    """Crop (bottom/right) or zero-pad (bottom/right) spatial dims to an exact size."""
    n, h, w, c = x.shape
    y = np.zeros((n, height, width, c), dtype=x.dtype)
    hh, ww = min(h, height), min(w, width)
    y[:, :hh, :ww] = x.data[:, :hh, :ww]

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :hh, :ww] = g[:, :hh, :ww]
        return (gx,)

    return record(y, [x], backward)


class BatchNormState:
    """Running statistics for one batchnorm layer; empty until the first training batch."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.running_mean is not None


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Per-channel normalization over (batch, height, width).

    Training mode uses batch statistics and folds them into the running
    averages (``running = m*running + (1-m)*batch``); inference mode uses the
    running averages and fails if there are none yet.
    """
    c = x.shape[-1]
    axes = tuple(range(x.ndim - 1))
    if train:
        mean = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.var(axis=axes, dtype=np.float64)
        m = state.momentum
        # blended in 64-bit, stored in the tensor dtype so checkpoints restore exactly
        if state.initialized:
            state.running_mean = (m * state.running_mean + (1 - m) * mean).astype(x.dtype)
            state.running_var = (m * state.running_var + (1 - m) * var).astype(x.dtype)
        else:
            state.running_mean, state.running_var = mean.astype(x.dtype), var.astype(x.dtype)
    else:
        if not state.initialized:
            raise RuntimeError("batchnorm running statistics are uninitialized; train the model first")
        mean, var = state.running_mean, state.running_var
    inv = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat = (x.data - mean.astype(x.dtype)) * inv
    y = gamma.data * xhat + beta.data
    count = x.data.size // c

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes, dtype=np.float64)
        gbeta = g.sum(axis=axes, dtype=np.float64)
        gxhat = g * gamma.data
        if train:
            s1 = gxhat.sum(axis=axes, dtype=np.float64).astype(x.dtype)
            s2 = (gxhat * xhat).sum(axis=axes, dtype=np.float64).astype(x.dtype)
            gx = inv / count * (count * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta

    return record(y, [x, gamma, beta], backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits)))


def softmax_crossentropy(logits: Tensor, one_hot, weights=None) -> Tensor:
    """Mean over the batch of ``-w_i * log softmax(logits_i)[true_i]``.

    ``one_hot`` is (N, K) with a single 1 per row. ``weights`` is an optional
    per-sample (N,) factor; a 1-d ``logits`` of length K is treated as N=1.
    """
    z = logits.data if logits.ndim == 2 else logits.data[None, :]
    t = np.asarray(one_hot, dtype=z.dtype).reshape(z.shape)
    if not (np.isin(t, (0, 1)).all() and (t.sum(axis=1) == 1).all()):
        raise ValueError("one_hot must have exactly one 1 per row and zeros elsewhere")
    n = z.shape[0]
    w = np.ones(n, dtype=z.dtype) if weights is None else np.asarray(weights, dtype=z.dtype).reshape(n)
    logp = log_softmax(z)
    per_sample = -(logp * t).sum(axis=1)
    loss = np.asarray((w * per_sample).sum(dtype=np.float64) / n, dtype=z.dtype)

    def backward(g):
        gz = (np.exp(logp) - t) * (w / n)[:, None] * g
        return (gz.reshape(logits.shape),)

    return record(loss, [logits], backward)


def sse_loss(x, x_hat) -> Tensor:
    """Sum of squared differences. Either argument may be a constant array."""
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x_hat.data - x.data
    loss = np.asarray((diff * diff).sum(dtype=np.float64), dtype=diff.dtype)
    return record(loss, [x, x_hat], lambda g: (-2 * g * diff, 2 * g * diff))
