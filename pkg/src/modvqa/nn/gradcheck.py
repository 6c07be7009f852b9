"""Central finite-difference verification of the autodiff graph.

Relative error uses a floored denominator so near-zero gradient entries
are compared absolutely: err = |a - n| / max(|a|, |n|, 1e-3), giving an
effective absolute tolerance of 1e-7 at the 1e-4 threshold.  Run the
graph in float64.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor

__all__ = ["numeric_gradient", "max_relative_error", "check_gradients"]

REL_FLOOR = 1e-3


def numeric_gradient(build_loss: Callable[[], Tensor], param: Tensor,
                     h: float = 1e-5) -> np.ndarray:
    """Central differences of the rebuilt scalar loss wrt one parameter."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = build_loss().item()
        flat[i] = orig - h
        fm = build_loss().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(build_loss: Callable[[], Tensor],
                    params: dict[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter between backprop and differences."""
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(build_loss, p, h)
        errors[name] = max_relative_error(analytic, numeric)
    return errors
