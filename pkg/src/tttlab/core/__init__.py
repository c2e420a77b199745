"""Minimal autodiff core: tensors, layers, SGD and a gradient oracle."""

from . import kernels
from .gradcheck import check_gradients, numerical_grad, relative_error
from .layers import (
    avg_pool,
    conv2d,
    global_avg_pool,
    group_norm,
    linear,
    log_softmax,
    relu,
    softmax,
    softmax_cross_entropy,
)
from .optim import SGD, ParamTape, SgdConfig, sgd_step
from .tensor import Tensor, backward, concat

__all__ = [
    "Tensor", "backward", "concat", "conv2d", "group_norm", "relu", "avg_pool",
    "global_avg_pool", "linear", "softmax", "log_softmax", "softmax_cross_entropy",
    "ParamTape", "SgdConfig", "SGD", "sgd_step", "numerical_grad", "relative_error",
    "check_gradients", "kernels",
]
