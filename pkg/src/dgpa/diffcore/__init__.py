"""Minimal tape-based reverse-mode autodiff over dense f64 tensors.

Everything differentiable in the toolkit is built on this subpackage:
the `Tensor`/`Tape` graph, `Parameter` leaves with Adam state, seeded
initializers, a finite-difference gradient checker, and the binary
checkpoint format.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, finite_diff_check
from .optim import FanInScaled, Gaussian, Uniform, adam_step, seeded_init
from .rng import RngStream
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    absolute,
    add,
    backward_pass,
    conv1d,
    cos,
    div,
    gather_rows,
    matmul,
    maxpool1d,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sqrt,
    square,
    sub,
    tanh,
)

__all__ = [
    "Tensor", "Tape", "Parameter", "RngStream",
    "backward_pass", "adam_step", "seeded_init", "finite_diff_check",
    "GradCheckReport", "Gaussian", "Uniform", "FanInScaled",
    "save_checkpoint", "load_checkpoint",
    "add", "sub", "mul", "div", "neg", "matmul",
    "relu", "tanh", "cos", "absolute", "square", "sqrt",
    "reduce_sum", "reduce_mean", "reshape", "gather_rows",
    "conv1d", "maxpool1d",
]
