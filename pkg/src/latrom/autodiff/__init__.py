"""Reverse-mode automatic differentiation over dense float64 tensors."""

from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, AdamState, RowAdam, adam_step
from .params import ParamStore
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    assert_finite,
    backward,
    broadcast_to,
    concat,
    cos,
    elementwise,
    getitem,
    matmul,
    mean,
    mse,
    mul,
    reshape,
    scale,
    sin,
    square,
    stack,
    sub,
    sum,
    take_rows,
    tanh,
)

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckReport",
    "ParamStore",
    "RowAdam",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "as_tensor",
    "assert_finite",
    "backward",
    "broadcast_to",
    "concat",
    "cos",
    "elementwise",
    "getitem",
    "grad_check",
    "matmul",
    "mean",
    "mse",
    "mul",
    "reshape",
    "scale",
    "sin",
    "square",
    "stack",
    "sub",
    "sum",
    "take_rows",
    "tanh",
]
