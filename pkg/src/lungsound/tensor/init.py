from __future__ import annotations

import numpy as np

from .core import Tensor, default_dtype


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def conv_kernel(k: int, cin: int, cout: int, rng: np.random.Generator) -> Tensor:
    return glorot_uniform((k, k, cin, cout), k * k * cin, k * k * cout, rng)


def dense_weights(n_in: int, n_out: int, rng: np.random.Generator) -> Tensor:
    return glorot_uniform((n_in, n_out), n_in, n_out, rng)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)


def ones(*shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=default_dtype()), requires_grad=True)
