"""Finite-difference verification of tape gradients.

The loss closure must be deterministic: fixed seeds, eval-mode batchnorm,
dropout off. Central differences with step h on a sample of coordinates
per parameter; relative error uses max(1, |analytic|, |numeric|) as the
denominator so tiny gradients do not blow up the ratio.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


def finite_difference_check(f, params: dict[str, Tensor], h: float = 1e-5,
                            samples_per_param: int = 3, seed: int = 0) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``f()`` evaluates the scalar loss from the current parameter values.
    """
    if h <= 0:
        raise ContractError("finite difference step h must be positive")
    for p in params.values():
        p.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ContractError("gradcheck loss must be scalar")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idxs = range(n) if n <= samples_per_param else sorted(
            rng.choice(n, size=samples_per_param, replace=False).tolist()
        )
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + h
            f_plus = f().item()
            flat[i] = keep - h
            f_minus = f().item()
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
