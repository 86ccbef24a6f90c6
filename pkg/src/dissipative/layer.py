"""Implicit theta-scheme residual layer ``y = x + F((1 - theta) x + theta y)``.

Solves are damped fixed-point sweeps when the map is provably contractive
and batched Newton otherwise. Recorded forward solves are differentiated
with the implicit function theorem: one transposed linear solve per point at
the converged state, independent of how many iterations the solve took.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .field import BoundField, LocalizedField
from .numerics import autodiff as ad
from .numerics.linalg import SingularMatrixError, SolveReport, lu_solve
from .stability import ThetaScheme

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, step=None, report=None):
        super().__init__(msg)
        self.step = step
        self.report = report


@dataclass
class Trajectory:
    times: list[int]
    states: list[np.ndarray]
    direction: str = "forward"
    # per-state, per-point convergence flags (adjoint trajectories only)
    valid: list[np.ndarray] | None = None
    reports: list[SolveReport] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.states)


def _bind(f) -> BoundField:
    return f.bind() if isinstance(f, LocalizedField) else f


def _detached(bf: BoundField) -> BoundField:
    if not any(isinstance(v, ad.Var) for v in bf.values.values()):
        return bf
    return BoundField(bf.mlp, bf.loc, bf.theta, {k: ad.value(v) for k, v in bf.values.items()})


def _scheme(f, scheme) -> ThetaScheme:
    if scheme is not None:
        return scheme
    if isinstance(f, LocalizedField):
        return f.scheme
    return ThetaScheme(theta=f.theta)


def _lip(bf: BoundField) -> float:
    c, r, _, _ = bf.localization()
    return abs(float(ad.value(c))) + float(ad.value(r))


def _safe_solve(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched solve that zeroes the update for singular systems instead of raising."""
    a = a.copy()
    b = b.copy()
    singular = np.zeros(a.shape[0], dtype=bool)
    eye = np.eye(a.shape[-1])
    while True:
        try:
            out = lu_solve(a, b)
            out[singular] = 0.0
            return out, singular
        except SingularMatrixError as exc:
            i = exc.index[0]
            singular[i] = True
            a[i] = eye
            b[i] = 0.0


def _newton(resid_jac, u, xs, tol, max_iter, max_halvings=10):
    """Damped Newton on independent per-point systems ``G(u; x) = 0``.

    ``resid_jac(u, x)`` returns residuals (N, d) and Jacobians (N, d, d) for
    matching rows of ``u`` and ``x``. A point whose line search stalls (or
    whose Newton matrix is singular) is dropped and left at its best iterate.
    """
    u = u.copy()
    g, jg = resid_jac(u, xs)
    res = np.linalg.norm(g, axis=1)
    stalled = np.zeros(u.shape[0], dtype=bool)
    its = 0
    while its < max_iter:
        idx = np.flatnonzero((res > tol) & ~stalled)
        if idx.size == 0:
            break
        its += 1
        du, singular = _safe_solve(jg[idx], -g[idx])
        stalled[idx[singular]] = True
        ua, xa, ra = u[idx], xs[idx], res[idx]
        step = np.ones(idx.size)
        pending = ~singular
        for _ in range(max_halvings):
            sub = np.flatnonzero(pending)
            if sub.size == 0:
                break
            trial = ua[sub] + step[sub, None] * du[sub]
            gt, jt = resid_jac(trial, xa[sub])
            rt = np.linalg.norm(gt, axis=1)
            ok = rt < ra[sub] * (1 - 1e-4 * step[sub]) + 1e-3 * tol
            acc = idx[sub[ok]]
            u[acc], g[acc], jg[acc], res[acc] = trial[ok], gt[ok], jt[ok], rt[ok]
            pending[sub[ok]] = False
            step[pending] *= 0.5
        stalled[idx[pending]] = True
    return u, res, its


def _fixed_point(update, u, xs, tol, max_iter):
    its = 0
    for its in range(1, max_iter + 1):
        new = update(u, xs)
        delta = np.linalg.norm(new - u, axis=1).max(initial=0.0)
        u = new
        if delta <= tol:
            break
    return u, its


def _equations(kind: str, bf: BoundField, th: float):
    d = bf.dim
    eye = np.eye(d)
    if kind == "forward":
        # unknown u = y, data x
        def resid_jac(u, x):
            fz, jz = bf.eval_and_jacobian((1 - th) * x + th * u)
            return u - x - fz, eye - th * jz

        def update(u, x):
            return x + bf.eval((1 - th) * x + th * u)

        def start(x):
            return x + bf.eval(x)

        factor = th
    else:
        # unknown u = x, data y
        def resid_jac(u, y):
            fz, jz = bf.eval_and_jacobian((1 - th) * u + th * y)
            return u - y + fz, eye + (1 - th) * jz

        def update(u, y):
            return y - bf.eval((1 - th) * u + th * y)

        def start(y):
            return y - bf.eval(y)

        factor = 1 - th
    return resid_jac, update, start, factor * _lip(bf)


def _solve(kind: str, bf: BoundField, data: np.ndarray, sch: ThetaScheme):
    """Numeric solve of the forward relation (given x find y) or adjoint (given y find x)."""
    resid_jac, update, start, contract = _equations(kind, bf, sch.theta)
    u = start(data)
    iters = 0
    method = "fixed_point"
    if contract < 0.9:
        u, iters = _fixed_point(update, u, data, sch.fp_tol * (1 - contract), sch.fp_max_iter)
    res = np.linalg.norm(resid_jac(u, data)[0], axis=1)
    if res.max(initial=0.0) > sch.fp_tol:
        method = "newton"
        if contract >= 0.9:
            u = start(data)
        u, res, nits = _newton(resid_jac, u, data, sch.fp_tol, sch.newton_max_iter)
        iters += nits
    worst = float(res.max(initial=0.0))
    return u, SolveReport(iters, worst, worst <= sch.fp_tol, method), res <= sch.fp_tol


def _as_batch(x):
    xv = ad.value(x)
    single = xv.ndim == 1
    return (ad.reshape(x, (1, -1)) if single else x), single


def forward(f, x, scheme: ThetaScheme | None = None):
    """One layer step ``y`` with its solve report.

    Differentiable w.r.t. ``x`` and parameters when either is a tape
    variable. ``theta = 0`` is a single explicit field evaluation.
    """
    bf = _bind(f)
    sch = _scheme(f, scheme)
    th = sch.theta
    xb, single = _as_batch(x)
    if th == 0.0:
        y = xb + bf.eval(xb)
        rep = SolveReport(1, 0.0, True, "explicit")
    else:
        num = _detached(bf)
        xv = ad.value(xb)
        yv, rep, _ = _solve("forward", num, xv, sch)
        if not rep.converged:
            log.warning("forward solve did not converge: residual %.3e", rep.residual)
        param_vars = {k: v for k, v in bf.values.items() if isinstance(v, ad.Var)}
        inputs = ([xb] if isinstance(xb, ad.Var) else []) + list(param_vars.values())
        if not inputs:
            y = yv
        else:
            y = ad.custom("implicit_layer", yv, inputs, _implicit_vjp(num, xv, yv, th, isinstance(xb, ad.Var), list(param_vars)))
    if single:
        y = ad.reshape(y, (-1,))
    return y, rep


def _implicit_vjp(num: BoundField, x, y, th, wrt_x, names):
    def vjp(gy):
        z = (1 - th) * x + th * y
        jz = num.jacobian(z)
        a = np.eye(x.shape[1]) - th * jz
        w = lu_solve(np.swapaxes(a, -1, -2), gy)
        grads = []
        if wrt_x:
            grads.append(w + (1 - th) * np.einsum("nji,nj->ni", jz, w))
        if names:
            tape = ad.Tape()
            leaves = {k: tape.var(v) for k, v in num.values.items()}
            sub = BoundField(num.mlp, num.loc, num.theta, leaves)
            s = ad.sum_(sub.eval(z) * w)
            g = ad.backward(s)
            grads.extend(g[leaves[k]] for k in names)
        return grads

    return vjp


def adjoint_step(f, y, scheme: ThetaScheme | None = None):
    """Step backwards: solve ``x = y - F((1 - theta) x + theta y)``.

    Returns ``(x, report, ok)`` where ``ok`` flags per-point convergence.
    Never recorded on a tape.
    """
    bf = _detached(_bind(f))
    sch = _scheme(f, scheme)
    yv = np.asarray(ad.value(y), dtype=float)
    single = yv.ndim == 1
    yb = yv[None] if single else yv
    if sch.theta == 1.0:
        x = yb - bf.eval(yb)
        rep, ok = SolveReport(1, 0.0, True, "explicit"), np.ones(yb.shape[0], bool)
    else:
        x, rep, ok = _solve("adjoint", bf, yb, sch)
    return (x[0] if single else x), rep, ok


def perturbation_gain(f, x, scheme: ThetaScheme | None = None, dx=None) -> np.ndarray:
    """``||R_theta(J) dx||`` with ``J`` the Jacobian at ``z = (1-theta) x + theta y``."""
    bf = _detached(_bind(f))
    sch = _scheme(f, scheme)
    th = sch.theta
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    y, _ = forward(bf, xb, sch)
    jz = bf.jacobian((1 - th) * xb + th * y)
    eye = np.eye(xb.shape[1])
    dxb = np.broadcast_to(np.asarray(dx, dtype=float), xb.shape)
    rhs = dxb + (1 - th) * np.einsum("nij,nj->ni", jz, dxb)
    out = lu_solve(eye - th * jz, rhs)
    gain = np.linalg.norm(out, axis=1)
    return gain[0] if np.ndim(x) == 1 else gain


def evolve(f, x0, steps: int, record_every: int = 1, scheme: ThetaScheme | None = None) -> Trajectory:
    """Apply the layer ``steps`` times, recording every ``record_every`` steps and the last."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    bf = _detached(_bind(f))
    sch = _scheme(f, scheme)
    x = np.array(x0, dtype=float)
    traj = Trajectory([0], [x.copy()], "forward")
    for t in range(1, steps + 1):
        x, rep = forward(bf, x, sch)
        traj.reports.append(rep)
        if not rep.converged:
            raise SolverError(f"forward solve failed at step {t} (residual {rep.residual:.3e})", t, rep)
        if t % record_every == 0 or t == steps:
            traj.times.append(t)
            traj.states.append(x.copy())
    return traj


def adjoint_trajectory(f, x0, steps: int, scheme: ThetaScheme | None = None) -> Trajectory:
    """``x0`` followed by ``steps`` successive adjoint steps.

    Points whose solve fails are flagged in ``valid`` from that step on.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    bf = _detached(_bind(f))
    sch = _scheme(f, scheme)
    x = np.array(x0, dtype=float)
    alive = np.ones(np.atleast_2d(x).shape[0], dtype=bool)
    traj = Trajectory([0], [x.copy()], "adjoint", valid=[alive.copy()])
    for j in range(1, steps + 1):
        x, rep, ok = adjoint_step(bf, x, sch)
        alive &= np.atleast_1d(ok)
        traj.times.append(j)
        traj.states.append(x.copy())
        traj.valid.append(alive.copy())
        traj.reports.append(rep)
    return traj
