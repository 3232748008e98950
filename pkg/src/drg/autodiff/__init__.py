"""Minimal reverse-mode differentiation engine over dense numpy arrays."""
from .tensor import (
    Tensor, Tape, backward, default_dtype, finite_checks_enabled, grad_enabled,
    no_grad, reset_tape, set_default_dtype, set_finite_checks, tape,
)
from .ops import (
    add, as_tensor, concat, conv2d, div, exp, log, matmul, mean, mul, neg,
    relu, reshape, sigmoid, slice_, softmax_cross_entropy, softplus,
    stop_gradient, sub, sum_, tanh, transpose, transpose_conv2d,
)
from .optim import ParamStore, adam_step, clip_grads_, ema_update
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "Tape", "backward", "default_dtype", "finite_checks_enabled",
    "grad_enabled", "no_grad", "reset_tape", "set_default_dtype",
    "set_finite_checks", "tape",
    "add", "as_tensor", "concat", "conv2d", "div", "exp", "log", "matmul",
    "mean", "mul", "neg", "relu", "reshape", "sigmoid", "slice_",
    "softmax_cross_entropy", "softplus", "stop_gradient", "sub", "sum_",
    "tanh", "transpose", "transpose_conv2d",
    "ParamStore", "adam_step", "clip_grads_", "ema_update",
    "load_checkpoint", "save_checkpoint",
]
