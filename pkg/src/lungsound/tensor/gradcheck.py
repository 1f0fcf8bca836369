"""Finite-difference gradient checking.

Numerical derivatives use the fourth-order central stencil
``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``, evaluated with the
tape disabled so the check never touches the code path that computes
the analytic gradient.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward, no_grad


def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5, index=None) -> np.ndarray:
    """Finite-difference gradient of ``f`` w.r.t. ``t``.

    With ``index`` (flat positions) only those entries are differentiated
    and the rest of the result is left at zero.
    """
    out = np.zeros(t.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    res = out.reshape(-1)
    positions = range(flat.size) if index is None else index
    with no_grad():
        for i in positions:
            x0 = flat[i]
            vals = []
            for step in (2, 1, -1, -2):
                flat[i] = x0 + step * h
                vals.append(float(f().data))
            flat[i] = x0
            res[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return out


def relative_error(analytic, numeric) -> float:
    """``max|a-n| / max(max|a|, max|n|)`` over everything passed in.

    Normalizing by the largest entry rather than entrywise keeps gradients
    that are exactly zero (dead ReLUs, non-max pool inputs, a bias feeding
    batchnorm) from turning finite-difference roundoff into a large ratio.
    Lists of arrays are treated as one concatenated vector.
    """
    if isinstance(analytic, (list, tuple)):
        a = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in analytic])
        n = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in numeric])
    else:
        a = np.asarray(analytic, dtype=np.float64)
        n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Relative error between backprop and finite differences over all ``params`` jointly.

    ``max_entries`` caps how many entries per tensor are differentiated
    numerically (chosen without replacement from ``rng``); the comparison
    then covers only those entries.
    """
    for p in params:
        p.grad = None
    backward(f())
    rng = rng or np.random.default_rng(0)
    analytic, numeric = [], []
    for p in params:
        a = p.grad if p.grad is not None else np.zeros(p.shape)
        idx = None
        if max_entries is not None and p.size > max_entries:
            idx = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        n = numerical_grad(f, p, h, idx)
        sel = slice(None) if idx is None else idx
        analytic.append(np.asarray(a, dtype=np.float64).reshape(-1)[sel])
        numeric.append(n.reshape(-1)[sel])
    return relative_error(analytic, numeric)
