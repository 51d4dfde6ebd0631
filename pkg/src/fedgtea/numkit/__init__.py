"""Minimal float64 tensor core: taped autodiff, Adam, symmetric eigensolver."""

from .linalg import sym_eig
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    broadcast_to,
    concat,
    constant,
    conv2d,
    div,
    exp,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    parameter,
    pause,
    record,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    sub,
    sum,
    tanh,
    transposed_conv2d,
    zero_grads,
)

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "add", "broadcast_to",
    "concat", "constant", "conv2d", "div", "exp", "leaky_relu", "log",
    "log_softmax", "matmul", "mean", "mul", "neg", "parameter", "pause",
    "record", "relu", "reshape", "sigmoid", "softmax", "softplus", "sqrt",
    "sub", "sum", "sym_eig", "tanh", "transposed_conv2d", "zero_grads",
]
