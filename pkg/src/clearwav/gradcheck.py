"""Finite-difference verification of tape gradients.

The fragment under test is a zero-argument callable that rebuilds the
scalar loss from the current parameter values.  It must be deterministic:
any noise, masks, or sampled indices are drawn once outside and captured
as constants.  Checks are only meaningful in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, no_grad

__all__ = ["grad_check", "GradCheckError"]


class GradCheckError(ValueError):
    pass


def grad_check(fragment: Callable[[], Tensor],
               params: Sequence[Parameter],
               epsilon: float = 1e-5) -> float:
    """Max over parameter coordinates of |analytic - numeric| / max(1, |numeric|).

    numeric is the central difference (f(w+eps) - f(w-eps)) / (2 eps).
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise GradCheckError(f"epsilon must be in [1e-6, 1e-3], got {epsilon}")
    for p in params:
        if p.dtype != np.float64:
            raise GradCheckError(f"grad_check requires float64 parameters, {p.name} is {p.dtype}")
        p.zero_grad()

    loss = fragment()
    if loss.size != 1:
        raise GradCheckError(f"fragment must return a scalar, got shape {loss.shape}")
    loss.backward()
    analytic = {p.name: np.array(p.grad, copy=True) for p in params}

    worst = 0.0
    bad: list[str] = []
    for p in params:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            with no_grad():
                f_plus = float(fragment().data)
            flat[i] = orig - epsilon
            with no_grad():
                f_minus = float(fragment().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[p.name].reshape(-1)[i]
            if not (np.isfinite(numeric) and np.isfinite(a)):
                bad.append(f"{p.name}[{i}]: analytic={a}, numeric={numeric}")
                continue
            rel = abs(a - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    if bad:
        raise GradCheckError("non-finite gradient comparison at: " + "; ".join(bad))
    return worst
