"""Central finite-difference gradient checking for every trainable layer."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .layers import Parameter
from .tensor import Tensor


def finite_difference_check(
    build_loss: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_elements_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central differences.

    ``build_loss`` must be a deterministic pure function of the parameter
    values. Returns the maximum relative error over all checked elements,
    where the relative error uses ``max(|analytic|, |numeric|, 0.01)`` as
    the denominator so near-zero gradients are compared absolutely.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements_per_param is not None and flat.size > max_elements_per_param:
            sampler = rng if rng is not None else np.random.default_rng(0)
            indices = sampler.choice(flat.size, size=max_elements_per_param, replace=False)
        grad_flat = analytic[p.name].reshape(-1)
        for i in indices:
            original = flat[i]
            flat[i] = original + eps
            f_plus = build_loss().item()
            flat[i] = original - eps
            f_minus = build_loss().item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2 * eps)
            a = grad_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-2)
            worst = max(worst, rel)
    for p in params:
        p.zero_grad()
    return worst
