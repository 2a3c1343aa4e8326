"""Finite-difference verification of the autodiff engine.

The checker projects the op output onto a fixed random direction to get
a scalar, computes its analytic gradient through the tape, and compares
against central differences taken one input element at a time. Run it in
float64 for tight tolerances; float32 is supported with a looser bound.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, backward


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    rng: np.random.Generator = None,
) -> float:
    """Return the worst relative error over all elements of all inputs
    that require gradients.

    Relative error per element is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1).
    """
    inputs = list(inputs)
    checked = [p for p in inputs if p.requires_grad]
    if not checked:
        raise ShapeError("gradcheck needs at least one input with requires_grad")
    if rng is None:
        rng = np.random.default_rng(0)

    out = fn(*inputs)
    seed = rng.standard_normal(out.data.shape).astype(out.data.dtype)

    def scalar() -> float:
        return float((fn(*inputs).data.astype(np.float64) * seed).sum())

    for p in checked:  # stale grads from earlier passes must not pollute this one
        p.grad = None
    backward(out, grad=seed)
    analytic = [p.grad.copy() for p in checked]

    worst = 0.0
    for p, ana in zip(checked, analytic):
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = scalar()
            flat[idx] = orig - eps
            minus = scalar()
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = float(ana.reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
