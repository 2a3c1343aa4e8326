"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray plus an optional record of how it was made
(parent tensors and a closure that maps the output gradient to parent
gradients). Calling :func:`backward` on a one-element tensor walks the
recorded graph in reverse topological order and accumulates gradients
into every tensor that requires them.

Activations are rank-4 ``(batch, channels, rows, cols)`` by convention;
parameters are rank 1-3 and the training loss is rank 0. Arrays are
float32 unless float64 is passed in explicitly (used by gradient
checking).
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericalError, ShapeError, StateError

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """An ndarray with an optional autodiff tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are rank 0..4, got shape {arr.shape}")
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise ShapeError(f"all dims must be >= 1, got shape {arr.shape}")
        # ascontiguousarray silently promotes rank 0 to rank 1
        self.data = arr.copy() if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)


def from_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Build an op result, recording the tape entry only when some parent
    needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _toposort(root: Tensor) -> list:
    order = []
    seen = set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every tensor that
    requires gradients and contributed to ``loss``.

    ``grad`` overrides the seed cotangent (defaults to ones) so gradient
    checking can differentiate non-scalar outputs through a fixed
    projection.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(
                f"backward() needs a one-element tensor, got shape {loss.shape}"
            )
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.data.dtype)
        if grad.shape != loss.data.shape:
            raise ShapeError(
                f"seed gradient shape {grad.shape} does not match output shape {loss.shape}"
            )
    if not loss.requires_grad:
        raise StateError("backward() on a tensor with no gradient path")
    loss.grad = grad.copy()
    for node in reversed(_toposort(loss)):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, pgrad in zip(node._parents, parent_grads):
            if pgrad is None or not parent.requires_grad:
                continue
            if pgrad.shape != parent.data.shape:
                raise ShapeError(
                    f"gradient shape {pgrad.shape} does not match tensor shape {parent.data.shape}"
                )
            if parent.grad is None:
                parent.grad = pgrad.astype(parent.data.dtype, copy=True)
            else:
                parent.grad += pgrad


def check_finite(x: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericalError(f"non-finite values in {what}")
