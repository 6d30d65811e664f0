"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigurationError, NumericError
from .tensor import Tensor, no_grad

# central-difference stencils: (offsets in steps, weights, divisor in steps)
_STENCILS = {
    2: ((-1, 1), (-1.0, 1.0), 2.0),
    4: ((-2, -1, 1, 2), (1.0, -8.0, 8.0, -1.0), 12.0),
}


def numeric_gradient(f: Callable[[], Tensor], param: Tensor, epsilon: float, order: int = 2) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every element of ``param``.

    ``order=4`` uses the five-point stencil; with a larger step it keeps
    roundoff low enough to resolve gradients near 1e-8 in double precision.
    """
    if order not in _STENCILS:
        raise ConfigurationError(f"stencil order must be one of {sorted(_STENCILS)}")
    offsets, weights, divisor = _STENCILS[order]
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            values = []
            for k in offsets:
                flat[i] = original + k * epsilon
                values.append(f().item())
            flat[i] = original
            if not np.isfinite(values).all():
                raise NumericError(f"non-finite loss while perturbing element {i}")
            out[i] = float(np.dot(weights, values)) / (divisor * epsilon)
    return grad


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    order: int = 2,
) -> float:
    """Max elementwise relative error between backprop and central differences.

    ``f`` must rebuild the loss from the current parameter values on every
    call and be deterministic (dropout off, fixed seed). The error for one
    element is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if not np.isfinite(analytic).all():
            raise NumericError("analytic gradient is not finite")
        numeric = numeric_gradient(f, p, epsilon, order)
        denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom, initial=0.0)))
    return worst
