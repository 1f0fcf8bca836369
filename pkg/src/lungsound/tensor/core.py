"""Tensor type, the recording tape, and reverse-mode backward pass."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_dtype = np.float32


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    global _dtype
    previous, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = previous


class Tensor:
    """An n-d array that can take part in reverse-mode differentiation.

    ``data`` is a plain numpy array. Leaves created by the user carry
    ``requires_grad``; results of recorded operations inherit it from
    their inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _dtype)
        if arr.ndim and 0 in arr.shape:
            raise ValueError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # elementwise sugar; defined in ops to keep the gradient rules in one place
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)


def _not_scalar(t):
    raise ValueError(f"expected a single-element tensor, got shape {t.shape}")


@dataclass
class Node:
    out: Tensor
    parents: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Operations in execution order; execution order is a topological order."""

    nodes: list = field(default_factory=list)
    enabled: bool = True

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


TAPE = Tape()


@contextlib.contextmanager
def no_grad(tape: Tape | None = None):
    tape = tape or TAPE
    previous, tape.enabled = tape.enabled, False
    try:
        yield
    finally:
        tape.enabled = previous


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn, tape: Tape | None = None) -> Tensor:
    """Wrap an op result; put it on the tape if any parent needs a gradient."""
    tape = tape or TAPE
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.is_leaf = True
    out.requires_grad = False
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.is_leaf = False
        tape.nodes.append(Node(out, tuple(parents), backward_fn))
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Gradients add up across multiple uses of a tensor. The tape is cleared
    afterwards, so each forward pass supports one backward pass.
    """
    tape = tape or TAPE
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        tape.clear()
        return
    loss.grad = np.ones_like(loss.data)
    try:
        for node in reversed(tape.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
                parent.grad = pg if parent.grad is None else parent.grad + pg
            node.out.grad = None
    finally:
        tape.clear()
