"""Finite-difference verification of analytic gradients.

The checker perturbs each parameter coordinate by +/- h, recomputes the
loss, and compares the central difference against the analytic gradient the
backward pass produced. It is meant to run on float64 parameters; float32
round-off swamps the h^2 truncation term and makes the comparison
meaningless.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .kernels import Parameter


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-12, abs(a) + abs(n))


def grad_check(
    loss_fn: Callable[[], float],
    params: list[Parameter],
    h: float = 1e-5,
    max_coords_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Return the maximum relative error over all checked coordinates.

    ``loss_fn`` must rebuild the forward pass from scratch, zero and refill
    every ``param.grad``, and return the scalar loss; the checker snapshots
    those analytic gradients, then probes coordinates with central
    differences. Large parameters can be spot-checked by capping
    ``max_coords_per_param`` (coordinates are drawn with ``rng``).
    """
    loss_fn()
    analytic = {p.name: p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        flat_value = p.value.reshape(-1)
        flat_analytic = analytic[p.name].reshape(-1)
        size = flat_value.size
        if max_coords_per_param is not None and size > max_coords_per_param:
            if rng is None:
                raise ValueError("rng required when subsampling coordinates")
            coords = rng.choice(size, size=max_coords_per_param, replace=False)
        else:
            coords = range(size)
        for i in coords:
            original = flat_value[i]
            flat_value[i] = original + h
            loss_plus = loss_fn()
            flat_value[i] = original - h
            loss_minus = loss_fn()
            flat_value[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            worst = max(worst, relative_error(float(flat_analytic[i]), numeric))
    loss_fn()  # leave grads consistent with the unperturbed parameters
    return worst
