"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numeric_grad(function: Callable[[Tensor], Tensor], point: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.array(point, dtype=point.dtype, copy=True)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(function(Tensor(x)).data)
        flat[i] = orig - eps
        down = float(function(Tensor(x)).data)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def grad_check(
    function: Callable[[Tensor], Tensor],
    point: Tensor,
    eps: float = 1e-5,
    reference_dtype=np.float64,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    The analytic gradient is taken at ``point`` in its own dtype. The
    numerical reference is evaluated in ``reference_dtype`` (float64 by
    default) so a single-precision analytic gradient is compared against a
    trustworthy estimate rather than against float32 rounding noise.
    Returns ``max |a - n| / max(|a|, |n|, 1e-8)`` over all coordinates.
    """
    x = Tensor(point.data.copy(), requires_grad=True)
    out = function(x)
    out.backward()
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
    numeric = numeric_grad(function, point.data.astype(reference_dtype), eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
