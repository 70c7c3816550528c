"""Dense-array compute core with reverse-mode gradients."""

from .gradcheck import grad_check
from .kernels import BACKEND
from .ops import (
    add,
    clamp,
    concat_channels,
    conv2d,
    downsample_avg2x,
    flatten,
    linear,
    maxpool2x2,
    mul,
    relu,
    scale,
    sigmoid,
    slice_channels,
    sum_all,
    tanh_act,
    upsample,
)
from .tensor import ParamStore, Tensor, sgd_step

__all__ = [
    "BACKEND",
    "ParamStore",
    "Tensor",
    "add",
    "clamp",
    "concat_channels",
    "conv2d",
    "downsample_avg2x",
    "flatten",
    "grad_check",
    "linear",
    "maxpool2x2",
    "mul",
    "relu",
    "scale",
    "sgd_step",
    "sigmoid",
    "slice_channels",
    "sum_all",
    "tanh_act",
    "upsample",
]
