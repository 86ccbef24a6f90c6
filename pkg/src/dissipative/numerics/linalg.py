"""Small dense linear algebra: LU solves, eigenvalues, spectral norms.

Sized for d <= ~16. Matrices are plain float numpy arrays; eigenvalues come
back as complex numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PIVOT_RTOL = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    """A pivot fell below ``PIVOT_RTOL * max|entry|``.

    ``index`` is the position in the batch of the offending matrix (``()`` for
    a single matrix).
    """

    def __init__(self, msg, index=()):
        super().__init__(msg)
        self.index = index


class ConvergenceError(np.linalg.LinAlgError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    method: str = "fixed_point"
    history: list = field(default_factory=list, repr=False)


@dataclass
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None  # columns, complex


def _as_square(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] < 1:
        raise ValueError("matrix dimension must be >= 1")
    return m


# ---------------------------------------------------------------------- LU


def lu_solve(a, b, *, rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting.

    Works batched: ``a`` is (..., d, d) and ``b`` is (..., d) or (..., d, k),
    with numpy broadcasting over the leading dimensions. Real or complex.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    d = a.shape[-1]
    vector = b.ndim == a.ndim - 1 or b.ndim == 1
    if vector:
        b = b[..., None]
    if b.shape[-2] != d:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype, float)
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    k = b.shape[-1]
    A = np.broadcast_to(a, batch + (d, d)).reshape(-1, d, d).astype(dtype, copy=True)
    B = np.broadcast_to(b, batch + (d, k)).reshape(-1, d, k).astype(dtype, copy=True)
    n = A.shape[0]
    rows = np.arange(n)
    thresh = rtol * (np.abs(A).max(axis=(1, 2)) if n else np.zeros(0))

    for j in range(d):
        p = j + np.argmax(np.abs(A[:, j:, j]), axis=1)
        swap = p != j
        if swap.any():
            r = rows[swap]
            pj = p[swap]
            A[r, j], A[r, pj] = A[r, pj].copy(), A[r, j].copy()
            B[r, j], B[r, pj] = B[r, pj].copy(), B[r, j].copy()
        piv = A[:, j, j]
        bad = ~(np.abs(piv) > thresh)
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            idx = np.unravel_index(first, batch) if batch else ()
            raise SingularMatrixError(f"singular matrix at batch index {idx} (pivot {j})", idx)
        f = A[:, j + 1:, j] / piv[:, None]
        A[:, j + 1:, j:] -= f[:, :, None] * A[:, None, j, j:]
        B[:, j + 1:, :] -= f[:, :, None] * B[:, None, j, :]

    X = np.empty_like(B)
    for j in range(d - 1, -1, -1):
        acc = B[:, j, :] - np.einsum("nc,nck->nk", A[:, j, j + 1:], X[:, j + 1:, :])
        X[:, j, :] = acc / A[:, j, j, None]
    X = X.reshape(batch + (d, k))
    return X[..., 0] if vector else X


# ---------------------------------------------------------------------- eigenvalues


def hessenberg(m) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similar to ``m``)."""
    h = np.array(_as_square(m), dtype=float)
    d = h.shape[0]
    for k in range(d - 2):
        x = h[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v /= vn
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _hqr(h: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Francis double-shift QR on an upper Hessenberg matrix (destroys ``h``).

    Deflated 1x1 blocks give real eigenvalues; 2x2 blocks are solved in
    closed form so complex pairs are exact conjugates.
    """
    n = h.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = h  # 1-based indexing keeps the bookkeeping readable
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = sum(abs(a[i, j]) for i in range(1, n + 1) for j in range(max(i - 1, 1), n + 1))
    nn = n
    t = 0.0
    while nn >= 1:
        its = 0
        while True:
            l = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1, ll - 1]) + abs(a[ll, ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll, ll - 1]) <= tol * s:
                    a[ll, ll - 1] = 0.0
                    l = ll
                    break
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
            else:
                y = a[nn - 1, nn - 1]
                w = a[nn, nn - 1] * a[nn - 1, nn]
                if l == nn - 1:
                    p = 0.5 * (y - x)
                    q = p * p + w
                    z = math.sqrt(abs(q))
                    x += t
                    if q >= 0.0:
                        z = p + math.copysign(z, p)
                        wr[nn - 1] = wr[nn] = x + z
                        if z != 0.0:
                            wr[nn] = x - w / z
                        wi[nn - 1] = wi[nn] = 0.0
                    else:
                        wr[nn - 1] = wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    nn -= 2
                else:
                    if its >= max_iter:
                        raise ConvergenceError(f"QR iteration did not converge in {max_iter} sweeps")
                    if its in (10, 20):
                        # exceptional shift
                        t += x
                        for i in range(1, nn + 1):
                            a[i, i] -= x
                        s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                        y = x = 0.75 * s
                        w = -0.4375 * s * s
                    its += 1
                    m = nn - 2
                    while m >= l:
                        z = a[m, m]
                        r = x - z
                        s = y - z
                        p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                        q = a[m + 1, m + 1] - z - r - s
                        r = a[m + 2, m + 1]
                        s = abs(p) + abs(q) + abs(r)
                        p /= s
                        q /= s
                        r /= s
                        if m == l:
                            break
                        u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                        v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                        if u <= tol * v:
                            break
                        m -= 1
                    for i in range(m + 2, nn + 1):
                        a[i, i - 2] = 0.0
                        if i != m + 2:
                            a[i, i - 3] = 0.0
                    for k in range(m, nn):
                        if k != m:
                            p = a[k, k - 1]
                            q = a[k + 1, k - 1]
                            r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                        if s != 0.0:
                            if k == m:
                                if l != m:
                                    a[k, k - 1] = -a[k, k - 1]
                            else:
                                a[k, k - 1] = -s * x
                            p += s
                            x = p / s
                            y = q / s
                            z = r / s
                            q /= p
                            r /= p
                            for j in range(k, nn + 1):
                                p = a[k, j] + q * a[k + 1, j]
                                if k != nn - 1:
                                    p += r * a[k + 2, j]
                                    a[k + 2, j] -= p * z
                                a[k + 1, j] -= p * y
                                a[k, j] -= p * x
                            mmin = min(nn, k + 3)
                            for i in range(l, mmin + 1):
                                p = x * a[i, k] + y * a[i, k + 1]
                                if k != nn - 1:
                                    p += z * a[i, k + 2]
                                    a[i, k + 2] -= p * r
                                a[i, k + 1] -= p * q
                                a[i, k] -= p
            if not l < nn - 1:
                break
    return wr[1:] + 1j * wi[1:]


def _inverse_iteration(m: np.ndarray, lam: complex, iters: int = 3) -> np.ndarray:
    d = m.shape[0]
    scale = max(np.abs(m).max(), 1.0)
    shift = lam + 1e-10 * scale
    a = m.astype(complex) - shift * np.eye(d)
    # deterministic, generic starting vector
    v = np.cos(np.arange(1, d + 1) * 1.618) + 1j * np.sin(np.arange(1, d + 1) * 0.577)
    for _ in range(iters):
        try:
            w = lu_solve(a, v, rtol=0.0)
        except SingularMatrixError:
            a = a - 1e-8 * scale * np.eye(d)
            w = lu_solve(a, v, rtol=0.0)
        v = w / np.linalg.norm(w)
    return v


def eigenvalues(m, tol: float = 1e-14, *, vectors: bool = False, max_iter: int = 60) -> EigenDecomposition:
    """All eigenvalues of a real square matrix.

    Hessenberg reduction followed by Francis double-shift QR. With
    ``vectors=True`` each eigenvector is obtained by a few steps of inverse
    iteration on the original matrix.
    """
    m = np.asarray(_as_square(m), dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    d = m.shape[0]
    if d == 1:
        lam = np.array([complex(m[0, 0])])
    else:
        lam = _hqr(hessenberg(m), tol, max_iter)
    if not vectors:
        return EigenDecomposition(lam)
    vecs = np.stack([_inverse_iteration(m, z) for z in lam], axis=1)
    return EigenDecomposition(lam, vecs)


def eigenvalues_batch(ms, tol: float = 1e-14) -> np.ndarray:
    """Eigenvalues for a stack (N, d, d); returns (N, d) complex."""
    ms = np.asarray(ms, dtype=float)
    if ms.shape[-1] == 2:
        # closed form for 2x2
        a, b, c, d = ms[:, 0, 0], ms[:, 0, 1], ms[:, 1, 0], ms[:, 1, 1]
        half_tr = 0.5 * (a + d)
        disc = (0.5 * (a - d)) ** 2 + b * c
        root = np.sqrt(disc.astype(complex))
        return np.stack([half_tr + root, half_tr - root], axis=1)
    return np.stack([eigenvalues(m, tol).eigenvalues for m in ms])


# ---------------------------------------------------------------------- spectral norm


def power_iteration(m: np.ndarray, v: np.ndarray, iters: int) -> tuple[float, np.ndarray, np.ndarray]:
    """``iters`` steps of power iteration on ``m^T m`` from right vector ``v``.

    Returns ``(sigma, u, v)`` with ``sigma = u^T m v``.
    """
    for _ in range(iters):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
    mv = m @ v
    sigma = float(np.linalg.norm(mv))
    u = mv / sigma if sigma > 0 else np.zeros(m.shape[0])
    return sigma, u, v


def _start_vector(n: int) -> np.ndarray:
    v = np.random.default_rng(0).standard_normal(n)
    return v / np.linalg.norm(v)


def spectral_norm(m, tol: float = 1e-9, max_iter: int = 1000, v0=None) -> tuple[float, SolveReport]:
    """Largest singular value by power iteration on ``m^T m``.

    Converged when successive estimates differ by at most ``tol`` relative.
    On budget exhaustion the best estimate is returned with
    ``report.converged = False``.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        raise ValueError("empty matrix")
    if m.ndim == 1:
        m = m[None, :]
    v = _start_vector(m.shape[1]) if v0 is None else np.asarray(v0, float) / np.linalg.norm(v0)
    sigma = float(np.linalg.norm(m @ v))
    history = [sigma]
    if sigma == 0.0 and not np.any(m):
        return 0.0, SolveReport(0, 0.0, True, "power_iteration", history)
    for it in range(1, max_iter + 1):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return sigma, SolveReport(it, 0.0, True, "power_iteration", history)
        v = w / nw
        new = float(np.linalg.norm(m @ v))
        history.append(new)
        change = abs(new - sigma)
        sigma = new
        if change <= tol * sigma:
            return sigma, SolveReport(it, change / sigma, True, "power_iteration", history)
    return sigma, SolveReport(max_iter, change / max(sigma, 1e-300), False, "power_iteration", history)
