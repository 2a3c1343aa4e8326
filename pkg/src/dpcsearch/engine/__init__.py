"""Minimal autodiff engine: tensors, operators, SGD, gradcheck, file IO."""

from .gradcheck import gradcheck
from .optim import init_velocity, sgd_step
from .ops import (
    ConvParams,
    atrous_sep_conv3x3,
    avg_pyramid_pool,
    bilinear_resize,
    concat_channels,
    conv1x1,
    depthwise_atrous3x3,
    grid_avg_pool,
    relu,
    softmax_xent_loss,
)
from .serialize import load_tensor, save_tensor
from .tensor import Tensor, backward, check_finite, from_op

__all__ = [
    "ConvParams",
    "Tensor",
    "atrous_sep_conv3x3",
    "avg_pyramid_pool",
    "backward",
    "bilinear_resize",
    "check_finite",
    "concat_channels",
    "conv1x1",
    "depthwise_atrous3x3",
    "from_op",
    "gradcheck",
    "grid_avg_pool",
    "init_velocity",
    "load_tensor",
    "relu",
    "save_tensor",
    "sgd_step",
    "softmax_xent_loss",
]
