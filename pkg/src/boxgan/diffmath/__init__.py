"""Reverse-mode differentiation over dense numpy tensors."""
from . import gabx
from .conv import conv2d, conv2d_weight, conv_transpose2d
from .gradcheck import GradCheckReport, grad_check
from .ops import (affine, arctan, broadcast_to, clip, concat, div, exp, getitem, leaky_relu, log, matmul,
                  maximum, mean, minimum, mul, neg, relu, reshape, sigmoid, softmax, sqrt, square, sub, sum,
                  sum_to, tanh, transpose, upsample2x, add)
from .optim import Adam, AdamState, NonFiniteError, adam_step
from .tensor import SecondOrderError, Tensor, backward, grad, grad_of_grad, is_grad_enabled, no_grad, set_grad_enabled

__all__ = [
    "Tensor", "grad", "backward", "grad_of_grad", "no_grad", "set_grad_enabled", "is_grad_enabled",
    "SecondOrderError", "add", "sub", "mul", "div", "neg", "square", "sqrt", "exp", "log", "arctan", "sigmoid",
    "softmax", "tanh", "relu", "leaky_relu", "minimum", "maximum", "clip", "sum", "mean", "reshape",
    "transpose", "getitem", "concat", "matmul", "affine", "upsample2x", "broadcast_to", "sum_to",
    "conv2d", "conv_transpose2d", "conv2d_weight", "adam_step", "Adam", "AdamState", "NonFiniteError",
    "grad_check", "GradCheckReport", "gabx",
]
