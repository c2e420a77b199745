"""Reverse-mode automatic differentiation on NumPy arrays.

A :class:`Tensor` wraps an ``ndarray``. Operations on tensors that require a
gradient record a backward closure and their parents; :func:`backward` walks
that graph in reverse topological order. Operations whose inputs do not
require a gradient record nothing, which keeps inference cheap.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ShapeError, StateError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: BackwardFn) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor.from_op(self.data + other, (self,), lambda g: (g,))
        if self.shape != other.shape:
            raise ShapeError(f"add: shapes {self.shape} and {other.shape} differ")
        return Tensor.from_op(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __mul__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise TypeError("only scalar multiplication is supported")
        c = float(scalar)
        return Tensor.from_op(self.data * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-other if isinstance(other, Tensor) else -other)

    def __getitem__(self, idx) -> "Tensor":
        """Slice along the leading (batch) axis."""
        if not isinstance(idx, slice):
            raise TypeError("tensors support slicing along axis 0 only")
        shape = self.shape

        def back(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] = g
            return (full,)

        return Tensor.from_op(self.data[idx], (self,), back)

    def transpose(self, *axes) -> "Tensor":
        inv = tuple(np.argsort(axes))
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def sum(self) -> "Tensor":
        shape = self.shape
        return Tensor.from_op(np.asarray(self.data.sum()), (self,), lambda g: (np.broadcast_to(g, shape),))

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the batch axis."""
    sizes = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=0), tensors, back)


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, tape=None) -> None:
    """Propagate d(loss)/d(leaf) into the ``grad`` slot of every leaf.

    When ``tape`` is given every parameter on it is zeroed first, so
    parameters the loss does not reach end with an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is not None:
        tape.zero_grad()
    if loss._backward is None:
        if loss.requires_grad:
            # loss is itself a leaf parameter
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise StateError("backward called on a value with no recorded forward pass")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.data.dtype, copy=True) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
