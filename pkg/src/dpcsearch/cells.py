"""Compile genotypes into executable cells and cost them.

A compiled cell owns one parameter set per branch (seeded, deterministic
init), runs branches in order feeding each from the cell input or an
earlier branch output, applies bias + ReLU after every branch (there is
no batch norm in this engine), concatenates all branch outputs, and maps
them to class logits with a final 1x1 convolution. Logits keep the
feature resolution; upsampling to label resolution is the training
loop's job.

The cost model mirrors construction exactly: parameter counts equal the
sizes of the allocated arrays, and multiply-add counts follow the
standard conventions (bias and plain averaging are not multiplies, a
bilinear resize costs 4 multiply-adds per output element).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .engine.ops import (
    ConvParams,
    atrous_sep_conv3x3,
    avg_pyramid_pool,
    concat_channels,
    conv1x1,
    relu,
)
from .engine.tensor import Tensor
from .errors import ConfigError, ShapeError
from .space import (
    KIND_ATROUS,
    KIND_CONV1X1,
    KIND_POOL,
    BranchSpec,
    Genotype,
    Operator,
    SearchSpaceConfig,
    require_valid,
)


@dataclass
class BranchModule:
    """Parameters backing one branch of a compiled cell."""

    spec: BranchSpec
    in_channels: int
    depthwise: Optional[ConvParams]
    pointwise: ConvParams

    def tensors(self) -> list:
        out = []
        if self.depthwise is not None:
            out.extend(self.depthwise.tensors())
        out.extend(self.pointwise.tensors())
        return out


def _he_weight(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    std = float(np.sqrt(2.0 / fan_in))
    data = (rng.standard_normal(shape) * std).astype(np.float32)
    return Tensor(data, requires_grad=True)


def _zero_bias(n: int) -> Tensor:
    return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)


class ExecutableCell:
    """A runnable, trainable dense prediction cell."""

    def __init__(
        self,
        genotype: Genotype,
        in_channels: int,
        filters: int,
        num_classes: int,
        seed: int = 0,
    ) -> None:
        if in_channels < 1 or filters < 1 or num_classes < 1:
            raise ConfigError(
                "in_channels, filters and num_classes must all be >= 1, got "
                f"{in_channels}, {filters}, {num_classes}"
            )
        require_valid(genotype, SearchSpaceConfig(num_branches=genotype.num_branches, filters=filters))
        self.genotype = genotype
        self.in_channels = in_channels
        self.filters = filters
        self.num_classes = num_classes
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.branches: List[BranchModule] = []
        for spec in genotype.branches:
            c_in = in_channels if spec.input == 0 else filters
            op = spec.op
            if op.kind == KIND_ATROUS:
                depthwise = ConvParams(_he_weight(rng, (c_in, 3, 3), fan_in=9))
                pointwise = ConvParams(
                    _he_weight(rng, (filters, c_in), fan_in=c_in), _zero_bias(filters)
                )
            else:
                depthwise = None
                pointwise = ConvParams(
                    _he_weight(rng, (filters, c_in), fan_in=c_in), _zero_bias(filters)
                )
            self.branches.append(BranchModule(spec, c_in, depthwise, pointwise))
        concat = filters * genotype.num_branches
        self.head = ConvParams(
            _he_weight(rng, (num_classes, concat), fan_in=concat), _zero_bias(num_classes)
        )

    def parameters(self) -> list:
        """All trainable tensors, branch order then head."""
        out = []
        for branch in self.branches:
            out.extend(branch.tensors())
        out.extend(self.head.tensors())
        return out

    def forward(self, x: Tensor) -> tuple:
        """Map features (n, in_channels, h, w) to a pair
        (concat (n, B*filters, h, w), logits (n, k, h, w))."""
        if x.data.ndim != 4:
            raise ShapeError(f"cell input must be rank 4, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"cell expects {self.in_channels} input channels, got shape {x.shape}"
            )
        outputs = [x]
        for branch in self.branches:
            src = outputs[branch.spec.input]
            op = branch.spec.op
            if op.kind == KIND_CONV1X1:
                y = conv1x1(src, branch.pointwise)
            elif op.kind == KIND_ATROUS:
                y = atrous_sep_conv3x3(
                    src, op.rate_h, op.rate_w, branch.depthwise, branch.pointwise
                )
            else:
                y = avg_pyramid_pool(src, op.grid_h, op.grid_w, branch.pointwise)
            outputs.append(relu(y))
        merged = concat_channels(outputs[1:])
        return merged, conv1x1(merged, self.head)

    def count_params(self) -> int:
        """Trainable scalar count, classifier head included."""
        total = 0
        for branch in self.branches:
            total += _branch_params(branch.spec.op, branch.in_channels, self.filters)
        total += self.filters * self.genotype.num_branches * self.num_classes + self.num_classes
        return total

    def count_madds(self, h: int, w: int) -> int:
        """Multiply-adds for one forward pass over an h-by-w feature map,
        classifier head included."""
        if h < 1 or w < 1:
            raise ConfigError(f"spatial dims must be >= 1, got ({h}, {w})")
        total = 0
        for branch in self.branches:
            total += _branch_madds(branch.spec.op, branch.in_channels, self.filters, h, w)
        total += self.filters * self.genotype.num_branches * self.num_classes * h * w
        return total


def compile_cell(
    genotype: Genotype,
    in_channels: int,
    filters: int,
    num_classes: int,
    seed: int = 0,
) -> ExecutableCell:
    return ExecutableCell(genotype, in_channels, filters, num_classes, seed)


def _branch_params(op: Operator, c_in: int, c_out: int) -> int:
    if op.kind == KIND_ATROUS:
        return 9 * c_in + c_in * c_out + c_out
    return c_in * c_out + c_out


def _branch_madds(op: Operator, c_in: int, c_out: int, h: int, w: int) -> int:
    if op.kind == KIND_CONV1X1:
        return c_in * c_out * h * w
    if op.kind == KIND_ATROUS:
        return 9 * c_in * h * w + c_in * c_out * h * w
    return c_in * c_out * op.grid_h * op.grid_w + 4 * c_out * h * w


@dataclass(frozen=True)
class CostSummary:
    """Architecture-only cost: branch convolutions, no classifier head,
    so comparisons do not depend on the number of classes."""

    params: int
    madds: int


def cost_summary(
    genotype: Genotype,
    in_channels: int,
    filters: int,
    feature_h: int,
    feature_w: int,
) -> CostSummary:
    """Closed-form branch costs of a genotype without allocating it."""
    require_valid(
        genotype, SearchSpaceConfig(num_branches=genotype.num_branches, filters=filters)
    )
    if in_channels < 1 or filters < 1:
        raise ConfigError(
            f"in_channels and filters must be >= 1, got {in_channels}, {filters}"
        )
    if feature_h < 1 or feature_w < 1:
        raise ConfigError(
            f"feature dims must be >= 1, got ({feature_h}, {feature_w})"
        )
    params = 0
    madds = 0
    for spec in genotype.branches:
        c_in = in_channels if spec.input == 0 else filters
        params += _branch_params(spec.op, c_in, filters)
        madds += _branch_madds(spec.op, c_in, filters, feature_h, feature_w)
    return CostSummary(params=params, madds=madds)
