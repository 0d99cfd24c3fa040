"""Central-finite-difference validation of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractViolation, StochasticForwardError
from .rng import RngStream
from .tensor import Parameter, Tape, Tensor, backward_pass

MIN_COORDS = 32


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between analytic and numeric grads."""

    per_parameter: dict[str, float] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max(self.per_parameter.values()) if self.per_parameter else 0.0

    def __str__(self) -> str:
        lines = [f"  {name}: {err:.3e}" for name, err in self.per_parameter.items()]
        return "\n".join([f"gradcheck max rel error {self.max_relative_error:.3e}"] + lines)


def finite_diff_check(forward: Callable[[Tensor], Tensor], params: Sequence[Parameter],
                      probe: Tensor, step: float = 1e-5,
                      rng: RngStream | None = None) -> GradCheckReport:
    """Compare backward-pass gradients against central differences.

    `forward(probe)` must return a scalar and must be deterministic
    (dropout off, batch statistics frozen); two identical calls that
    disagree abort the check.  For each parameter a random subsample of
    at least `MIN_COORDS` coordinates is perturbed by ±step and the
    worst relative error |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-12) is reported.
    """
    if not (0.0 < step <= 1e-2):
        raise ContractViolation(f"step must be in (0, 1e-2], got {step}")
    rng = rng if rng is not None else RngStream(0)

    first = forward(probe).data.copy()
    second = forward(probe).data.copy()
    if not np.array_equal(first, second):
        raise StochasticForwardError(
            "forward pass is stochastic; disable dropout and freeze batch statistics")

    with Tape(params) as tape:
        loss = forward(probe)
    backward_pass(tape, loss)
    analytic = {p.name: p.gradient.copy() for p in params}

    report = GradCheckReport()
    for p in params:
        flat = p.value.data.reshape(-1)
        n = flat.size
        if n <= MIN_COORDS:
            coords = np.arange(n)
        else:
            coords = rng.permutation(n)[:MIN_COORDS]
        worst = 0.0
        ana = analytic[p.name].reshape(-1)
        for c in coords:
            saved = flat[c]
            flat[c] = saved + step
            f_plus = forward(probe).item()
            flat[c] = saved - step
            f_minus = forward(probe).item()
            flat[c] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(ana[c]), abs(numeric), 1e-12)
            worst = max(worst, abs(ana[c] - numeric) / denom)
        report.per_parameter[p.name] = worst
    return report
