"""Stochastic estimation of squared Frobenius norms."""

from __future__ import annotations

from typing import Callable

import numpy as np


def rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.choice(np.array([-1.0, 1.0]), size=shape)


def hutchinson_frobenius_sq(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    probes: int,
    rng: np.random.Generator,
    *,
    chunk: int = 4096,
) -> float:
    """Estimate ``||M||_F^2 = Tr(M^T M)`` from actions of ``M``.

    ``apply`` receives a (dim, k) block of Rademacher probe columns and must
    return ``M @ block``. The result is ``mean_k ||M v_k||^2``, unbiased
    because ``E[v v^T] = I``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if dim == 0:
        return 0.0
    total = 0.0
    done = 0
    while done < probes:
        k = min(chunk, probes - done)
        v = rademacher(rng, (dim, k))
        mv = np.asarray(apply(v))
        total += float(np.sum(np.abs(mv) ** 2))
        done += k
    return total / probes
