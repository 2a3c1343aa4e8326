"""Small seeded feature extractor.

A stack of strided dense 3x3 convolutions with ReLU, reaching the
configured output stride with channel width ramping up to out_channels.
Frozen by default: parameters take no gradients, which is what makes
per-image feature caching sound. Reranking uses an unfrozen copy so
gradients flow all the way in.

The strided dense conv is an implementation detail of this backbone, not
part of the cell operator catalogue, so it lives here on top of the same
autodiff tape.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List

import numpy as np

from ..engine.ops import ConvParams
from ..engine.tensor import Tensor, from_op
from ..errors import ConfigError, ShapeError
from ..seeding import derive_seed

_LEGAL_STRIDES = (1, 2, 4, 8)


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    out_channels: int = 32
    stride: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.out_channels < 1:
            raise ConfigError(f"out_channels must be >= 1, got {self.out_channels}")
        if self.stride not in _LEGAL_STRIDES:
            raise ConfigError(
                f"stride must be one of {_LEGAL_STRIDES}, got {self.stride}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def conv3x3_strided(x: Tensor, params: ConvParams, stride: int) -> Tensor:
    """Dense 3x3 convolution, zero "same" padding, output dims
    ceil(h/stride) x ceil(w/stride). Weight layout (c_out, c_in, 3, 3)."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv input must be rank 4, got shape {x.shape}")
    w, b = params.weight, params.bias
    if w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv weight must be (c_out, c_in, 3, 3), got {w.shape}")
    n, c, h, wd = x.shape
    c_out, c_in = w.shape[:2]
    if c_in != c:
        raise ShapeError(f"conv weight {w.shape} does not match input {x.shape}")
    out_h = -(-h // stride)
    out_w = -(-wd // stride)

    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, c_out, out_h, out_w), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            sl = xp[:, :, u : u + stride * (out_h - 1) + 1 : stride,
                    v : v + stride * (out_w - 1) + 1 : stride]
            out += np.einsum("oc,ncij->noij", w.data[:, :, u, v], sl)
    if b is not None:
        out += b.data[None, :, None, None]

    def bwd(g: np.ndarray):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                sl = np.s_[:, :, u : u + stride * (out_h - 1) + 1 : stride,
                           v : v + stride * (out_w - 1) + 1 : stride]
                gw[:, :, u, v] = np.einsum("noij,ncij->oc", g, xp[sl])
                gxp[sl] += np.einsum("oc,noij->ncij", w.data[:, :, u, v], g)
        gx = gxp[:, :, 1 : 1 + h, 1 : 1 + wd]
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return from_op(out, parents, bwd)


def _relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g: np.ndarray):
        return (g * mask,)

    return from_op(x.data * mask, (x,), bwd)


def _layer_plan(cfg: BackboneConfig) -> list:
    """(in_channels, out_channels, stride) per layer; one stride-2 layer
    per factor of 2, widths ramping geometrically to out_channels."""
    if cfg.stride == 1:
        return [(cfg.in_channels, cfg.out_channels, 1)]
    depth = cfg.stride.bit_length() - 1
    widths = [max(4, cfg.out_channels // 2 ** (depth - 1 - i)) for i in range(depth)]
    widths[-1] = cfg.out_channels
    plan = []
    prev = cfg.in_channels
    for width in widths:
        plan.append((prev, width, 2))
        prev = width
    return plan


class Backbone:
    """Feature extractor; deterministic given its config seed."""

    def __init__(self, cfg: BackboneConfig, frozen: bool = True) -> None:
        self.cfg = cfg
        self.frozen = frozen
        rng = np.random.default_rng(derive_seed(cfg.seed, "backbone"))
        self.layers: List[ConvParams] = []
        for c_in, c_out, _ in _layer_plan(cfg):
            std = float(np.sqrt(2.0 / (9 * c_in)))
            weight = Tensor(
                (rng.standard_normal((c_out, c_in, 3, 3)) * std).astype(np.float32),
                requires_grad=not frozen,
            )
            bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=not frozen)
            self.layers.append(ConvParams(weight, bias))

    def forward(self, images: Tensor) -> Tensor:
        if images.data.ndim != 4:
            raise ShapeError(f"backbone input must be rank 4, got shape {images.shape}")
        if images.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"backbone expects {self.cfg.in_channels} input channels, "
                f"got shape {images.shape}"
            )
        out = images
        for params, (_, _, stride) in zip(self.layers, _layer_plan(self.cfg)):
            out = _relu(conv3x3_strided(out, params, stride))
        return out

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out.extend(layer.tensors())
        return out

    def trainable_copy(self) -> "Backbone":
        """Same weights, gradients enabled; the original stays frozen."""
        copy = Backbone(self.cfg, frozen=False)
        for dst, src in zip(copy.parameters(), self.parameters()):
            dst.data[...] = src.data
        return copy

    def fingerprint(self) -> str:
        arch = ",".join(f"{a}-{b}s{s}" for a, b, s in _layer_plan(self.cfg))
        text = f"backbone-v1|seed={self.cfg.seed}|arch={arch}"
        return hashlib.sha256(text.encode()).hexdigest()
