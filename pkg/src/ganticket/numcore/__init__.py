"""Dense float64 tensors with reverse-mode autodiff, plus Adam."""

from ganticket.numcore.tensor import (
    Tensor,
    add,
    backward,
    clip,
    div,
    is_grad_enabled,
    l1_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    scaled_norm,
    sigmoid,
    softplus,
    spectral_scale,
    square,
    sub,
    sum,
    tanh,
)
from ganticket.numcore.optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "clip",
    "div",
    "is_grad_enabled",
    "l1_norm",
    "linear",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "scaled_norm",
    "sigmoid",
    "softplus",
    "spectral_scale",
    "square",
    "sub",
    "sum",
    "tanh",
]
