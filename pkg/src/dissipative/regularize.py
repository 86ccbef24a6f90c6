"""Training regularizers that make the data a dissipative (attractive) manifold.

* ``r_f``      squared field magnitude on the data,
* ``r_lambda`` squared Frobenius norm of the linearized step ``R_theta(J)``,
* ``r_n``      attraction of points pushed off the data along the level-set normal,
* ``r_adj``    attraction of points found by stepping the layer backwards.

Each takes a field binding (``BoundField`` or ``LocalizedField``) and returns a
batch mean; the value is a tape variable when the binding holds tape leaves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .field import BoundField, LocalizedField
from .layer import Trajectory, _bind, _detached, adjoint_trajectory
from .numerics import autodiff as ad
from .numerics.linalg import SingularMatrixError, lu_solve
from .numerics.trace import hutchinson_frobenius_sq
from .stability import ThetaScheme

EXACT_MAX_DIM = 8


@dataclass
class RegWeights:
    w_F: float = 1.0
    w_lambda: float = 0.01
    w_n: float = 1.0
    w_adj: float = 1.0
    alpha_max: float = 0.5
    eps_scale: float = 1e-2
    adjoint_steps: int = 1
    probes: int = 16
    normalize_normal: bool = True

    def __post_init__(self):
        for k in ("w_F", "w_lambda", "w_n", "w_adj"):
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{k} must be finite and >= 0")
        if self.alpha_max <= 0 or self.eps_scale <= 0:
            raise ValueError("alpha_max and eps_scale must be positive")
        if self.adjoint_steps < 0:
            raise ValueError("adjoint_steps must be >= 0")


class Perturbation(NamedTuple):
    alpha: np.ndarray  # (N,)
    normal: np.ndarray  # (N, d), zero rows where degenerate
    degenerate: np.ndarray  # (N,) bool

    @property
    def offset(self) -> np.ndarray:
        return self.alpha[:, None] * self.normal


class RegularizerError(ArithmeticError):
    pass


def r_f(f, x):
    """Mean of ``||F(x)||^2`` over the batch."""
    bf = _bind(f)
    fx = bf.eval(x)
    return ad.mean(ad.sum_(fx * fx, axis=-1))


def _step_matrix(jac, theta, eye):
    a = eye - theta * jac
    b = eye + (1.0 - theta) * jac
    return ad.solve(a, b)


def r_lambda(f, x, scheme: ThetaScheme | float | None = None, probes: int | None = None, rng=None):
    """Mean of ``||R_theta(D_x F)||_F^2`` over the batch.

    With ``probes=None`` (and d <= 8) the step matrix is assembled exactly and
    the result is differentiable. Otherwise a detached Hutchinson estimate
    with ``probes`` Rademacher vectors per point is returned as a float.
    """
    bf = _bind(f)
    theta = _theta(f, scheme)
    x = np.atleast_2d(ad.value(x)) if not isinstance(x, ad.Var) else x
    d = bf.dim
    eye = np.eye(d)
    if probes is None and d <= EXACT_MAX_DIM:
        jac = bf.jacobian(x)
        try:
            m = _step_matrix(jac, theta, eye)
        except SingularMatrixError as exc:
            raise RegularizerError(f"I - theta*J is singular at point {exc.index}: {ad.value(x)[exc.index]}") from exc
        return ad.mean(ad.sum_(m * m, axis=(-2, -1)))
    if probes is None:
        probes = 16
    rng = np.random.default_rng(rng)
    jac = _detached(bf).jacobian(ad.value(x))
    total = 0.0
    for k, j in enumerate(jac):
        a = eye - theta * j
        b = eye + (1.0 - theta) * j
        try:
            total += hutchinson_frobenius_sq(lambda v: lu_solve(a, b @ v), d, probes, rng)
        except SingularMatrixError as exc:
            raise RegularizerError(f"I - theta*J is singular at point {k}") from exc
    return total / len(jac)


def _theta(f, scheme) -> float:
    if scheme is None:
        return f.theta
    if isinstance(scheme, ThetaScheme):
        return scheme.theta
    return float(scheme)


def normal_direction(f, x, eps_scale: float, rng, *, normalize: bool = True):
    """Level-set normals ``grad ||F(x + eps)||^2`` at jittered points.

    Returns ``(n, degenerate)``; degenerate rows (gradient norm < 1e-12) are
    zero. Computed from the detached field: ``grad ||F||^2 = 2 J^T F``.
    """
    bf = _detached(_bind(f))
    xv = np.asarray(ad.value(x), dtype=float)
    single = xv.ndim == 1
    xb = np.atleast_2d(xv)
    rng = np.random.default_rng(rng)
    p = xb + eps_scale * rng.standard_normal(xb.shape)
    fp, jp = bf.eval_and_jacobian(p)
    g = 2.0 * np.einsum("nji,nj->ni", jp, fp)
    norm = np.linalg.norm(g, axis=1)
    degenerate = norm < 1e-12
    if normalize:
        n = np.where(degenerate[:, None], 0.0, g / np.where(degenerate, 1.0, norm)[:, None])
    else:
        n = np.where(degenerate[:, None], 0.0, g)
    if single:
        return n[0], bool(degenerate[0])
    return n, degenerate


def draw_perturbation(f, x, weights: RegWeights, rng) -> Perturbation:
    """Per-point step length ``alpha`` in (0, alpha_max] and unit normal ``n``."""
    rng = np.random.default_rng(rng)
    xb = np.atleast_2d(ad.value(x))
    alpha = weights.alpha_max * (1.0 - rng.random(xb.shape[0]))
    n, degenerate = normal_direction(f, xb, weights.eps_scale, rng, normalize=weights.normalize_normal)
    return Perturbation(alpha, n, degenerate)


def r_n(f, x, weights: RegWeights, rng=None, perturbation: Perturbation | None = None):
    """Mean of ``||F(x + alpha n) + alpha n||^2``; alpha and n are constants."""
    bf = _bind(f)
    pert = perturbation or draw_perturbation(bf, x, weights, rng)
    off = pert.offset
    fx = bf.eval(x + off)
    e = fx + off
    return ad.mean(ad.sum_(e * e, axis=-1))


def r_adj(f, x, weights: RegWeights, scheme: ThetaScheme | None = None, rng=None,
          perturbation: Perturbation | None = None, report: dict | None = None,
          trajectory: Trajectory | None = None):
    """Mean over points of ``sum_j ||F(x_j) + x_j - x||^2``.

    ``x_0 = x + alpha n`` and ``x_1..x_K`` are successive adjoint steps
    (K = ``weights.adjoint_steps``), held fixed during differentiation. A
    point's sum stops at its last converged adjoint state. Pass
    ``trajectory`` to reuse previously computed states.
    """
    bf = _bind(f)
    if scheme is None:
        scheme = f.scheme if isinstance(f, LocalizedField) else ThetaScheme(theta=bf.theta)
    pert = perturbation or draw_perturbation(bf, x, weights, rng)
    xv = np.atleast_2d(ad.value(x))
    x0 = xv + pert.offset
    states = [x0]
    valid = [np.ones(xv.shape[0], dtype=bool)]
    if trajectory is not None:
        states, valid = trajectory.states, trajectory.valid
    elif weights.adjoint_steps >= 1:
        traj = adjoint_trajectory(_detached(bf), x0, weights.adjoint_steps, scheme)
        states, valid = traj.states, traj.valid
        if report is not None:
            report["adjoint_failed"] = int((~valid[-1]).sum())
    pts = np.concatenate(states, axis=0)
    mask = np.concatenate(valid).astype(float)
    anchor = np.concatenate([xv] * len(states), axis=0)
    # points that failed to converge are parked on the data so they add nothing
    pts = np.where(mask[:, None] > 0, pts, anchor)
    fx = bf.eval(pts)
    target = ad.concatenate([x] * len(states), axis=0) if isinstance(x, ad.Var) else anchor
    e = (fx + pts - target) * mask[:, None]
    per_state = ad.sum_(e * e, axis=-1)
    return ad.sum_(per_state) / float(xv.shape[0])
