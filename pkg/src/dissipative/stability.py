"""Stability function of the theta-scheme residual layer and its regions.

``stab_value(theta, z) = (1 + (1 - theta) z) / (1 - theta z)`` is the
amplification of a linear eigenmode with eigenvalue ``z``; the stability
region is where its modulus is below one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.autodiff import Var, value

POLE_ATOL = 1e-14


class PoleError(ZeroDivisionError):
    """Evaluation at (or numerically on top of) a pole."""


@dataclass(frozen=True)
class ThetaScheme:
    theta: float = 0.0
    fp_tol: float = 1e-10
    fp_max_iter: int = 100
    newton_max_iter: int = 25

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.fp_tol <= 0:
            raise ValueError("fp_tol must be positive")


@dataclass(frozen=True)
class StabilityDisk:
    center: float
    radius: float
    c_hat: float
    L: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @classmethod
    def from_values(cls, theta: float, c_hat: float, L: float) -> "StabilityDisk":
        """The disk ``B(R^-1(c_hat), max(0, R^-1(L) - R^-1(c_hat)))``."""
        c = float(np.real(stab_inverse(theta, c_hat)))
        edge = float(np.real(stab_inverse(theta, L)))
        return cls(c, max(0.0, edge - c), float(c_hat), float(L))


def stab_value(theta: float, z):
    """``R_theta(z)``; accepts complex scalars or arrays (arrays flag nothing)."""
    zv = np.asarray(z, dtype=complex)
    den = 1.0 - theta * zv
    if np.any(np.abs(den) <= POLE_ATOL):
        raise PoleError(f"R_theta has a pole at z = 1/theta (theta={theta})")
    out = (1.0 + (1.0 - theta) * zv) / den
    return complex(out) if out.ndim == 0 else out


def stab_inverse(theta: float, z):
    """``R_theta^{-1}(z) = (1 - z) / (theta (1 - z) - 1)``.

    Real ``z`` (including tape variables) stays real so the localization
    parameters can be differentiated through it.
    """
    zv = value(z) if isinstance(z, Var) else np.asarray(z)
    den = theta * (1.0 - zv) - 1.0
    if np.any(np.abs(den) <= POLE_ATOL):
        raise PoleError(f"R_theta^-1 has a pole at z = 1 - 1/theta (theta={theta})")
    if isinstance(z, Var):
        return (1.0 - z) / (theta * (1.0 - z) - 1.0)
    out = (1.0 - zv) / den
    if np.iscomplexobj(out):
        return complex(out) if out.ndim == 0 else out
    return float(out) if out.ndim == 0 else out


def in_region(theta: float, z) -> bool:
    """Membership ``|R_theta(z)| < 1``; a pole is outside the region."""
    try:
        return abs(stab_value(theta, complex(z))) < 1.0
    except PoleError:
        return False


@dataclass
class RegionGrid:
    re: np.ndarray  # (n,)
    im: np.ndarray  # (n,)
    magnitude: np.ndarray  # (n, n), row index = imaginary part; nan at poles
    mask: np.ndarray  # (n, n) bool
    pole: np.ndarray  # (n, n) bool


def region_grid(theta: float, re_range=(-5.0, 5.0), im_range=(-5.0, 5.0), n: int = 401) -> RegionGrid:
    """Evaluate ``|R_theta|`` and region membership on a uniform n x n grid."""
    if n < 2:
        raise ValueError("n must be >= 2")
    re = np.linspace(re_range[0], re_range[1], n)
    im = np.linspace(im_range[0], im_range[1], n)
    z = re[None, :] + 1j * im[:, None]
    den = 1.0 - theta * z
    pole = np.abs(den) <= POLE_ATOL
    safe = np.where(pole, 1.0, den)
    mag = np.abs((1.0 + (1.0 - theta) * z) / safe)
    mag[pole] = np.nan
    mask = np.where(pole, False, mag < 1.0)
    return RegionGrid(re, im, mag, mask, pole)


def disk_sup(theta: float, disk: StabilityDisk, samples: int = 4096) -> tuple[float, complex]:
    """Maximize ``|R_theta|`` over the closed disk by boundary sampling.

    ``|R_theta|`` is the modulus of a Moebius map, hence subharmonic away from
    its pole, so the maximum over a pole-free disk sits on the boundary.
    Returns the maximum value and the boundary point attaining it.
    """
    c, r = disk.center, disk.radius
    if theta > 0 and abs(1.0 / theta - c) <= r:
        raise PoleError("the pole 1/theta lies inside the disk")
    if r == 0.0:
        return abs(stab_value(theta, c)), complex(c)
    phi = 2.0 * np.pi * np.arange(samples) / samples
    pts = c + r * np.exp(1j * phi)
    vals = np.abs(stab_value(theta, pts))
    k = int(np.argmax(vals))
    return float(vals[k]), complex(pts[k])
