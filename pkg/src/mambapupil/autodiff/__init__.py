"""Minimal numpy tensor engine with reverse-mode differentiation."""

from .tensor import (Tensor, add, backward, concat, default_dtype, exp, get_default_dtype, log, matmul,
                     mean, mul, no_grad, parameter, relu, set_default_dtype, sigmoid, softplus, sqrt, stack,
                     tanh, unstack, where)
from .functional import (RunningStats, avgpool2d, batchnorm2d, conv2d, global_avg_pool, linear,
                         maxpool2d, rmsnorm, spatial_dropout, spatial_softargmax)
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "backward", "concat", "default_dtype", "exp", "get_default_dtype", "log", "matmul",
    "mean", "mul", "no_grad", "parameter", "relu", "set_default_dtype", "sigmoid", "softplus", "sqrt",
    "stack", "tanh", "unstack", "where", "RunningStats", "avgpool2d", "batchnorm2d", "conv2d",
    "global_avg_pool", "linear", "maxpool2d", "rmsnorm", "spatial_dropout", "spatial_softargmax",
    "AdamState", "LrSchedule",
    "adam_step", "lr_at", "load_checkpoint", "save_checkpoint",
]
