"""Adam optimizer and seeded parameter initialization."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ..errors import ContractViolation
from .rng import RngStream
from .tensor import Parameter, Tensor


def adam_step(params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, step: int = 1) -> None:
    """Apply one bias-corrected Adam update in place.

    `step` is 1-based; gradients must have been populated by a backward
    pass.  Frozen parameters are never touched.
    """
    if step < 1:
        raise ContractViolation(f"step must be >= 1, got {step}")
    if lr <= 0:
        raise ContractViolation(f"lr must be positive, got {lr}")
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p in params:
        if not p.trainable:
            continue
        g = p.gradient
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        p.value.data -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)


class Gaussian:
    """Init scheme: zero-mean gaussian entries with given sigma."""

    def __init__(self, sigma: float = 1.0):
        if sigma <= 0:
            raise ContractViolation(f"sigma must be positive, got {sigma}")
        self.sigma = sigma


class Uniform:
    """Init scheme: uniform entries in [a, b)."""

    def __init__(self, a: float, b: float):
        if a >= b:
            raise ContractViolation(f"need a < b, got a={a}, b={b}")
        self.a = a
        self.b = b


class FanInScaled:
    """Init scheme: gaussian with sigma = sqrt(2 / fan_in) (He-style)."""


def _fan_in(shape: Sequence[int]) -> int:
    # weight layouts: dense [in, out] -> in; conv [filters, in_ch, k] -> in_ch * k
    if len(shape) == 1:
        return shape[0]
    if len(shape) == 2:
        return shape[0]
    return int(np.prod(shape[1:]))


def seeded_init(shape: Sequence[int], scheme, rng: RngStream) -> Tensor:
    """Draw a tensor deterministically from (scheme, rng state)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ContractViolation("shape must be nonempty")
    if isinstance(scheme, Gaussian):
        return Tensor(rng.normal(shape, sigma=scheme.sigma))
    if isinstance(scheme, Uniform):
        return Tensor(rng.uniform(shape, low=scheme.a, high=scheme.b))
    if isinstance(scheme, FanInScaled):
        sigma = math.sqrt(2.0 / _fan_in(shape))
        return Tensor(rng.normal(shape, sigma=sigma))
    raise ContractViolation(f"unknown init scheme {scheme!r}")
