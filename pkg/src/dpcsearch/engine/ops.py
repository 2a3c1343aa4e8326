"""Differentiable operators for dense prediction cells.

All activations are ``(batch, channels, rows, cols)``. Convolutions here
use explicit zero "same" padding, stride 1, and carry bias only where a
branch ends in a pointwise projection. Heavy contractions go through
matmul so BLAS does the work; the 3x3 depthwise taps are nine shifted
fused multiply-adds.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError, ShapeError
from ..space import ATROUS_RATES, POOL_GRIDS
from .tensor import Tensor, from_op


@dataclass
class ConvParams:
    """Weight/bias pair for one convolution.

    Layouts: plain or pointwise 1x1 conv uses weight ``(c_out, c_in)``;
    depthwise 3x3 uses weight ``(c, 3, 3)`` and no bias.
    """

    weight: Tensor
    bias: Optional[Tensor] = None

    def tensors(self) -> list:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


def _check_activation(x: Tensor, name: str) -> None:
    if not isinstance(x, Tensor):
        raise ShapeError(f"{name} must be a Tensor, got {type(x).__name__}")
    if x.data.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n,c,h,w), got shape {x.shape}")


def conv1x1(x: Tensor, params: ConvParams) -> Tensor:
    """Pointwise convolution: every output channel is a learned linear
    combination of input channels at the same pixel, plus bias."""
    _check_activation(x, "conv1x1 input")
    w, b = params.weight, params.bias
    if w.data.ndim != 2:
        raise ShapeError(f"conv1x1 weight must be rank 2 (c_out, c_in), got {w.shape}")
    n, c, h, wd = x.shape
    c_out, c_in = w.shape
    if c_in != c:
        raise ShapeError(f"conv1x1 weight {w.shape} does not match input {x.shape}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv1x1 bias {b.shape} must be ({c_out},)")

    x3 = x.data.reshape(n, c, h * wd)
    out = np.matmul(w.data, x3)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, c_out, h, wd)

    def bwd(g: np.ndarray):
        g3 = g.reshape(n, c_out, h * wd)
        gx = np.matmul(w.data.T, g3).reshape(x.shape)
        gw = np.matmul(g3, x3.transpose(0, 2, 1)).sum(axis=0)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return from_op(out, parents, bwd)


def depthwise_atrous3x3(x: Tensor, rate_h: int, rate_w: int, weight: Tensor) -> Tensor:
    """Per-channel 3x3 convolution with taps at offsets {-r, 0, +r} on
    each axis and zero padding, so output size equals input size."""
    _check_activation(x, "depthwise input")
    if rate_h not in ATROUS_RATES or rate_w not in ATROUS_RATES:
        raise ShapeError(f"atrous rates must come from {ATROUS_RATES}, got ({rate_h}, {rate_w})")
    if weight.data.ndim != 3 or weight.shape[1:] != (3, 3):
        raise ShapeError(f"depthwise weight must be rank 3 (c, 3, 3), got {weight.shape}")
    n, c, h, wd = x.shape
    if weight.shape[0] != c:
        raise ShapeError(f"depthwise weight {weight.shape} does not match input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (rate_h, rate_h), (rate_w, rate_w)))
    out = np.zeros_like(x.data)
    for u in range(3):
        for v in range(3):
            tap = weight.data[:, u, v].reshape(1, c, 1, 1)
            out += tap * xp[:, :, u * rate_h : u * rate_h + h, v * rate_w : v * rate_w + wd]

    def bwd(g: np.ndarray):
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                sl = np.s_[:, :, u * rate_h : u * rate_h + h, v * rate_w : v * rate_w + wd]
                gw[:, u, v] = np.einsum("nchw,nchw->c", g, xp[sl])
                gxp[sl] += weight.data[:, u, v].reshape(1, c, 1, 1) * g
        gx = gxp[:, :, rate_h : rate_h + h, rate_w : rate_w + wd]
        return gx, gw

    return from_op(out, (x, weight), bwd)


def atrous_sep_conv3x3(
    x: Tensor,
    rate_h: int,
    rate_w: int,
    depthwise: ConvParams,
    pointwise: ConvParams,
) -> Tensor:
    """Depthwise atrous 3x3 followed by a pointwise projection; bias
    lives only on the pointwise stage."""
    if depthwise.bias is not None:
        raise ShapeError("separable conv carries bias only on the pointwise stage")
    return conv1x1(depthwise_atrous3x3(x, rate_h, rate_w, depthwise.weight), pointwise)


def grid_avg_pool(x: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Average over a grid of cells; cell (a, b) covers rows
    [floor(a*h/g), floor((a+1)*h/g)) and similarly for columns."""
    _check_activation(x, "pool input")
    if grid_h not in POOL_GRIDS or grid_w not in POOL_GRIDS:
        raise ShapeError(f"pool grids must come from {POOL_GRIDS}, got ({grid_h}, {grid_w})")
    n, c, h, wd = x.shape
    if grid_h > h or grid_w > wd:
        raise ShapeError(f"grid ({grid_h}, {grid_w}) larger than spatial dims of {x.shape}")

    row_edges = [(a * h) // grid_h for a in range(grid_h + 1)]
    col_edges = [(b * wd) // grid_w for b in range(grid_w + 1)]
    out = np.empty((n, c, grid_h, grid_w), dtype=x.dtype)
    for a in range(grid_h):
        for b in range(grid_w):
            cell = x.data[:, :, row_edges[a] : row_edges[a + 1], col_edges[b] : col_edges[b + 1]]
            out[:, :, a, b] = cell.mean(axis=(2, 3))

    def bwd(g: np.ndarray):
        gx = np.empty_like(x.data)
        for a in range(grid_h):
            for b in range(grid_w):
                r0, r1 = row_edges[a], row_edges[a + 1]
                c0, c1 = col_edges[b], col_edges[b + 1]
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] = (g[:, :, a, b] / area)[:, :, None, None]
        return (gx,)

    return from_op(out, (x,), bwd)


@lru_cache(maxsize=128)
def _interp_matrix(in_size: int, out_size: int, dtype_name: str) -> np.ndarray:
    """Row i holds the weights over input positions for output position i,
    with corner pixels of input and output aligned."""
    m = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        src = i * (in_size - 1) / (out_size - 1) if out_size > 1 else 0.0
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        if hi != lo:
            m[i, hi] += t
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resize, expressed as two interpolation
    matrices so the backward pass is just their transposes."""
    _check_activation(x, "resize input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be >= 1, got ({out_h}, {out_w})")
    n, c, h, wd = x.shape
    ry = _interp_matrix(h, out_h, x.dtype.name)
    rx = _interp_matrix(wd, out_w, x.dtype.name)
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def bwd(g: np.ndarray):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return from_op(out, (x,), bwd)


def avg_pyramid_pool(x: Tensor, grid_h: int, grid_w: int, proj: ConvParams) -> Tensor:
    """Grid-average the input, project the pooled map with a 1x1 conv at
    grid resolution, then resize back to the input's spatial size."""
    n, c, h, wd = x.shape
    pooled = grid_avg_pool(x, grid_h, grid_w)
    return bilinear_resize(conv1x1(pooled, proj), h, wd)


def relu(x: Tensor) -> Tensor:
    _check_activation(x, "relu input")
    mask = x.data > 0

    def bwd(g: np.ndarray):
        return (g * mask,)

    return from_op(x.data * mask, (x,), bwd)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; batch and spatial dims must
    agree across all inputs."""
    if len(xs) == 0:
        raise ShapeError("concat needs at least one input")
    for i, x in enumerate(xs):
        _check_activation(x, f"concat input {i}")
    first = xs[0].shape
    for i, x in enumerate(xs[1:], start=1):
        n0, _, h0, w0 = first
        n1, _, h1, w1 = x.shape
        if (n0, h0, w0) != (n1, h1, w1):
            raise ShapeError(
                f"concat input 0 has shape {first}, input {i} has shape {x.shape}"
            )
    out = np.concatenate([x.data for x in xs], axis=1)
    offsets = np.cumsum([0] + [x.shape[1] for x in xs])

    def bwd(g: np.ndarray):
        return tuple(
            g[:, offsets[i] : offsets[i + 1]].copy() for i in range(len(xs))
        )

    return from_op(out, tuple(xs), bwd)


def softmax_xent_loss(logits: Tensor, labels: np.ndarray, ignore_label: int = 255) -> Tensor:
    """Mean per-pixel cross entropy over pixels whose label is not the
    ignore value. With every pixel ignored the loss is 0 and so is the
    gradient."""
    _check_activation(logits, "loss logits")
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    n, k, h, wd = logits.shape
    if labels.shape != (n, h, wd):
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits {logits.shape}"
        )
    valid = labels != ignore_label
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        value = labels[bad].flat[0]
        raise DataError(f"label {value} outside [0, {k}) and not the ignore value {ignore_label}")
    count = int(valid.sum())
    dtype = logits.dtype
    if count == 0:
        def bwd_empty(g: np.ndarray):
            return (np.zeros_like(logits.data),)

        return from_op(np.zeros((), dtype=dtype), (logits,), bwd_empty)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(se)
    safe = np.where(valid, labels, 0)[:, None, :, :]
    nll = -np.take_along_axis(logp, safe, axis=1)[:, 0]
    loss = (nll * valid).sum(dtype=np.float64) / count

    def bwd(g: np.ndarray):
        scale = float(g) / count
        coef = valid.astype(dtype) * dtype.type(scale)
        gl = (ez / se) * coef[:, None]
        hit = np.take_along_axis(gl, safe, axis=1) - coef[:, None]
        np.put_along_axis(gl, safe, hit, axis=1)
        return (gl,)

    return from_op(np.asarray(loss, dtype=dtype), (logits,), bwd)
