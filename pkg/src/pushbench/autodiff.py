"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and records enough of the computation
graph to backpropagate a scalar loss to every parameter that requires
gradients.  Only the handful of operations the denoiser network needs are
implemented: matmul, broadcast add/sub/mul, SiLU, and full reduction.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import GraphError

__all__ = ["Tensor", "silu", "sigmoid"]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids exp overflow for large negative inputs
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node in the autodiff graph; leaves with ``requires_grad`` accumulate ``.grad``."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._vjp = _vjp
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor(self.data + other.data, _parents=(self, other), _vjp=vjp)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._lift(other)

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return Tensor(self.data - other.data, _parents=(self, other), _vjp=vjp)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)

        def vjp(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return Tensor(self.data * other.data, _parents=(self, other), _vjp=vjp)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        def vjp(g):
            return (-g,)

        return Tensor(-self.data, _parents=(self,), _vjp=vjp)

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise GraphError("matmul supports 2-D operands only")

        def vjp(g):
            return g @ other.data.T, self.data.T @ g

        return Tensor(self.data @ other.data, _parents=(self, other), _vjp=vjp)

    def sum(self) -> "Tensor":
        shape = self.shape

        def vjp(g):
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor(self.data.sum(), _parents=(self,), _vjp=vjp)

    def mean(self) -> "Tensor":
        shape, n = self.shape, self.size

        def vjp(g):
            return (np.broadcast_to(g / n, shape).copy(),)

        return Tensor(self.data.mean(), _parents=(self,), _vjp=vjp)

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        ``self`` must be a scalar attached to a recorded graph; a second call
        on the same graph raises ``GraphError``.
        """
        if self.data.ndim != 0:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self._parents:
            raise GraphError("loss is detached from any computation graph")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rerun the forward pass")
        self._consumed = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def silu(x):
    """Sigmoid-weighted linear unit; accepts a Tensor or a plain array."""
    if isinstance(x, Tensor):
        s = sigmoid(x.data)
        out_data = x.data * s

        def vjp(g):
            return (g * (s * (1.0 + x.data * (1.0 - s))),)

        return Tensor(out_data, _parents=(x,), _vjp=vjp)
    s = sigmoid(x)
    return x * s
