"""Central finite-difference gradient verification.

This is the acceptance oracle for every differentiable operation: run the
graph in 64-bit, compare the tape gradient against central differences
coordinate by coordinate, and report the worst relative error.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .tensor import Tape, Tensor

_REL_FLOOR = 1e-3  # below this magnitude the comparison is effectively absolute


def grad_check(f, theta: Tensor, eps: float = 1e-5) -> float:
    """Worst relative error between tape and finite-difference gradients.

    ``f`` is called as ``f(theta)`` and must return a scalar Tensor built
    from ``theta`` (64-bit strongly recommended). ``theta.data`` is
    perturbed in place during the sweep and restored afterwards.
    """
    if not (1e-5 <= eps <= 1e-3):
        raise UsageError(f"eps must lie in [1e-5, 1e-3], got {eps}")
    theta.grad = None
    with Tape() as tape:
        out = f(theta)
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise UsageError("grad_check objective must return a scalar Tensor")
        tape.backward(out)
    analytic = np.zeros_like(theta.data) if theta.grad is None else theta.grad.copy()

    flat = theta.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_hi = f(theta).item()
        flat[i] = orig - eps
        f_lo = f(theta).item()
        flat[i] = orig
        numeric[i] = (f_hi - f_lo) / (2.0 * eps)
    numeric = numeric.reshape(theta.data.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))
