"""Verification of reverse-mode gradients against central finite differences."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-4,
    max_coords_per_param: int = 16,
    rng: np.random.Generator | None = None,
    rel_floor: float = 1e-6,
) -> float:
    """Compare analytic gradients with (L(p+eps) - L(p-eps)) / (2 eps).

    ``loss_fn`` must be a deterministic closure over ``params`` returning a
    scalar Tensor. For each parameter up to ``max_coords_per_param``
    coordinates are sampled and perturbed. Returns the worst relative error
    max(|a - n|) / max(|a|, |n|, rel_floor) over all sampled coordinates.

    Run this with float64 parameters: in float32 the finite-difference
    quotient is dominated by rounding noise and the comparison is
    meaningless.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if rng is None:
        rng = np.random.default_rng(0)

    loss = loss_fn()
    if loss.size != 1:
        raise ValueError("loss_fn must return a scalar")
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss")
    for p in params.values():
        p.grad = None
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_coords = min(max_coords_per_param, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            lp = float(loss_fn().data)
            flat[c] = orig - eps
            lm = float(loss_fn().data)
            flat[c] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError("non-finite loss during perturbation")
            numeric = (lp - lm) / (2.0 * eps)
            a = analytic[name].reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            worst = max(worst, rel)
    return worst
