"""Minimal reverse-mode automatic differentiation on numpy arrays.

Small tape-based engine covering exactly the operations needed to
backpropagate through a feed-forward policy network and a multiplicative
wealth recursion: elementwise arithmetic, matmul, exp/log/tanh/sigmoid,
floors, stacking, and reductions.  Everything runs in float64.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "clip_min",
    "stack_columns",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node in the computation graph; wraps a float64 ndarray."""

    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)

    @property
    def shape(self):
        return self.value.shape

    # -- graph construction ------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        parents = (
            (self, lambda g: _unbroadcast(g, self.shape)),
            (other, lambda g: _unbroadcast(g, other.shape)),
        )
        return Tensor(self.value + other.value, parents)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * (other if isinstance(other, Tensor) else constant(other))

    def __rsub__(self, other):
        return (other if isinstance(other, Tensor) else constant(other)) + (-1.0) * self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        parents = (
            (self, lambda g: _unbroadcast(g * other.value, self.shape)),
            (other, lambda g: _unbroadcast(g * self.value, other.shape)),
        )
        return Tensor(self.value * other.value, parents)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        parents = (
            (self, lambda g: _unbroadcast(g / other.value, self.shape)),
            (other, lambda g: _unbroadcast(-g * self.value / other.value**2, other.shape)),
        )
        return Tensor(self.value / other.value, parents)

    def __rtruediv__(self, other):
        return (other if isinstance(other, Tensor) else constant(other)) / self

    def __neg__(self):
        return (-1.0) * self

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        parents = (
            (self, lambda g: g @ other.value.T),
            (other, lambda g: self.value.T @ g),
        )
        return Tensor(self.value @ other.value, parents)

    def reshape(self, *shape):
        old = self.shape
        return Tensor(
            self.value.reshape(*shape),
            ((self, lambda g: g.reshape(old)),),
        )

    def sum(self):
        shape = self.shape
        return Tensor(
            self.value.sum(),
            ((self, lambda g: np.broadcast_to(g, shape).copy()),),
        )

    def mean(self):
        n = self.value.size
        return self.sum() * (1.0 / n)

    # -- backward pass -----------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.value.ndim != 0:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                stack.append((parent, False))
        self.grad = np.ones(())
        for node in reversed(order):
            g = node.grad
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.zeros(parent.shape)
                parent.grad = parent.grad + contrib


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    t = Tensor(np.array(value, dtype=np.float64))
    t.requires_grad = True
    return t


def exp(x: Tensor) -> Tensor:
    out_value = np.exp(x.value)
    return Tensor(out_value, ((x, lambda g: g * out_value),))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), ((x, lambda g: g / x.value),))


def tanh(x: Tensor) -> Tensor:
    out_value = np.tanh(x.value)
    return Tensor(out_value, ((x, lambda g: g * (1.0 - out_value**2)),))


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    out_value = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                         np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return Tensor(out_value, ((x, lambda g: g * out_value * (1.0 - out_value)),))


def clip_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); zero gradient where the floor binds."""
    mask = x.value > floor
    return Tensor(
        np.maximum(x.value, floor),
        ((x, lambda g: g * mask),),
    )


def stack_columns(columns: list[Tensor]) -> Tensor:
    """Stack same-length vectors into an (n, k) matrix."""
    values = np.stack([c.value for c in columns], axis=1)
    parents = tuple(
        (col, lambda g, j=j: g[:, j]) for j, col in enumerate(columns)
    )
    return Tensor(values, parents)
