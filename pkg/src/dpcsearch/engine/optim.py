"""Heavy-ball SGD updates over lists of parameter tensors."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from ..errors import StateError
from .tensor import Tensor


def init_velocity(params: Sequence[Tensor]) -> List[np.ndarray]:
    return [np.zeros_like(p.data) for p in params]


def sgd_step(
    params: Sequence[Tensor],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.9,
) -> None:
    """v <- momentum*v + grad; p <- p - lr*v; then clear grads.

    Every parameter must hold a gradient (i.e. backward ran since the
    last step); a missing one means the training loop is out of order.
    """
    if len(params) != len(velocity):
        raise StateError(
            f"{len(params)} params but {len(velocity)} velocity slots"
        )
    for p, v in zip(params, velocity):
        if p.grad is None:
            raise StateError("sgd_step before backward: a parameter has no gradient")
        v *= momentum
        v += p.grad
        p.data -= lr * v
        p.grad = None
