"""Toy point clouds in the plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCURVE_SCALE = 2.0  # maps the unit s-curve (x in [-1,1], y in [-2,2]) into [-4,4]^2


@dataclass
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[1] < 1:
            raise ValueError("points need at least one coordinate")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite entries")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def scurve_point(t):
    """Unscaled s-curve: two 3/4 circles of radius 1 joined at the origin."""
    t = np.asarray(t, dtype=float)
    return np.stack([np.sin(t), np.sign(t) * (np.cos(t) - 1.0)], axis=-1)


def make_scurve(n: int, noise: float = 0.0, seed=None) -> PointCloud:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, n)
    pts = SCURVE_SCALE * scurve_point(t)
    if noise:
        pts = pts + noise * rng.standard_normal(pts.shape)
    return PointCloud(pts, t)


def make_circle(n: int, radius: float = 3.0, noise: float = 0.0, seed=None) -> PointCloud:
    if n < 1 or radius <= 0:
        raise ValueError("need n >= 1 and radius > 0")
    rng = np.random.default_rng(seed)
    # equally spaced angles with a seeded phase
    phi = rng.uniform(0.0, 2.0 * np.pi) + 2.0 * np.pi * np.arange(n) / n
    pts = radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    if noise:
        pts = pts + noise * rng.standard_normal(pts.shape)
    return PointCloud(pts, phi)


def uniform_cloud(n: int, low=-4.0, high=4.0, dim: int = 2, seed=None) -> np.ndarray:
    return np.random.default_rng(seed).uniform(low, high, (n, dim))


def nearest_distance(points: np.ndarray, reference: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Distance from each point to its nearest reference point."""
    points = np.atleast_2d(points)
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], chunk):
        p = points[lo:lo + chunk]
        d2 = ((p[:, None, :] - reference[None, :, :]) ** 2).sum(-1)
        out[lo:lo + chunk] = np.sqrt(d2.min(axis=1))
    return out
