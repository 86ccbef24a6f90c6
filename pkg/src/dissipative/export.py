"""Plain-text exports: CSV tables, grid exports, JSON sidecars and SVG sketches.

CSV layout::

    # key: value            (zero or more metadata comment lines)
    col_a,col_b,...         (header row)
    0.10000000000000001,... (one row per record)

Values are written with ``%.17g`` so every float64 survives a round trip;
integral values print without a decimal point and ``nan``/``inf`` are spelled
that way. Reading a file with :func:`read_csv` and writing it back with
:func:`write_csv` reproduces it byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__


@dataclass
class Table:
    columns: list[str]
    data: np.ndarray  # (rows, len(columns)) float
    meta: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        for name in self.columns:
            if not name or any(ch in name for ch in ",\n#"):
                raise ValueError(f"bad column name {name!r}")

    def column(self, name) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def get_meta(self, key, default=None):
        for k, v in self.meta:
            if k == key:
                return v
        return default


def format_float(v: float) -> str:
    # %.17g round-trips every float64 and prints integral values without a point
    return "%.17g" % float(v)


def header(command: str, seed=None, **extra) -> list[tuple[str, str]]:
    """Metadata lines every export carries."""
    meta = [("dissipative", __version__), ("command", command), ("seed", "none" if seed is None else str(seed))]
    meta += [(k, str(v)) for k, v in extra.items()]
    return meta


def table_to_text(t: Table) -> str:
    lines = [f"# {k}: {v}" for k, v in t.meta]
    lines.append(",".join(t.columns))
    lines += [",".join(format_float(v) for v in row) for row in t.data]
    return "\n".join(lines) + "\n"


def table_from_text(text: str) -> Table:
    meta, rows, columns = [], [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        if columns is None and line.startswith("#"):
            key, sep, val = line[1:].strip().partition(":")
            meta.append((key.strip(), val.strip() if sep else ""))
        elif columns is None:
            columns = line.split(",")
        elif line.strip():
            parts = line.split(",")
            if len(parts) != len(columns):
                raise ValueError(f"line {lineno}: expected {len(columns)} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    if columns is None:
        raise ValueError("missing header row")
    return Table(columns, np.array(rows, dtype=float).reshape(len(rows), len(columns)), meta)


def write_csv(path, t: Table):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table_to_text(t))


def read_csv(path) -> Table:
    with open(path, encoding="utf-8") as fh:
        return table_from_text(fh.read())


def coordinate_columns(dim: int) -> list[str]:
    return ["x", "y"] if dim == 2 else [f"x{i}" for i in range(dim)]


def points_table(points, meta=()) -> Table:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return Table(coordinate_columns(p.shape[1]), p, list(meta))


def read_points(path) -> np.ndarray:
    """Point coordinates from a CSV; uses the coordinate columns when present."""
    t = read_csv(path)
    for dim in range(1, len(t.columns) + 1):
        names = coordinate_columns(dim)
        if t.columns[:dim] == names and (dim == len(t.columns) or t.columns[dim] not in coordinate_columns(dim + 1)):
            return t.data[:, :dim]
    return t.data


@dataclass
class GridExport:
    bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    resolution: int
    channels: dict[str, np.ndarray]  # name -> (resolution, resolution), row index = y

    def __post_init__(self):
        n = self.resolution
        for name, ch in self.channels.items():
            if np.shape(ch) != (n, n):
                raise ValueError(f"channel {name!r} has shape {np.shape(ch)}, expected {(n, n)}")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")

    def axes(self):
        xmin, xmax, ymin, ymax = self.bounds
        n = self.resolution
        return np.linspace(xmin, xmax, n), np.linspace(ymin, ymax, n)

    def to_table(self, meta=()) -> Table:
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        cols = [gx.ravel(), gy.ravel()] + [np.asarray(c, dtype=float).ravel() for c in self.channels.values()]
        xmin, xmax, ymin, ymax = self.bounds
        info = list(meta) + [("bounds", f"{format_float(xmin)} {format_float(xmax)} {format_float(ymin)} {format_float(ymax)}"),
                             ("resolution", str(self.resolution)), ("order", "row-major, y outer, x inner")]
        return Table(["x", "y"] + list(self.channels), np.stack(cols, axis=1), info)

    @classmethod
    def from_table(cls, t: Table) -> "GridExport":
        n = int(t.get_meta("resolution"))
        b = tuple(float(v) for v in t.get_meta("bounds").split())
        chans = {c: t.column(c).reshape(n, n) for c in t.columns[2:]}
        return cls(b, n, chans)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


# --- SVG -----------------------------------------------------------------

class Svg:
    """Minimal SVG canvas mapping data coordinates to a square viewport."""

    def __init__(self, bounds, size=600, margin=20):
        self.xmin, self.xmax, self.ymin, self.ymax = (float(b) for b in bounds)
        self.size, self.margin = size, margin
        self.items: list[str] = []

    def _map(self, x, y):
        s = self.size - 2 * self.margin
        px = self.margin + (np.asarray(x) - self.xmin) / (self.xmax - self.xmin) * s
        py = self.margin + (self.ymax - np.asarray(y)) / (self.ymax - self.ymin) * s
        return px, py

    def points(self, pts, color="black", radius=1.5):
        px, py = self._map(pts[:, 0], pts[:, 1])
        for a, b in zip(px, py):
            self.items.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{radius}" fill="{color}"/>')

    def segments(self, segs, color="black", width=1.0):
        for (x0, y0), (x1, y1) in segs:
            (a, b), (c, d) = self._map(x0, y0), self._map(x1, y1)
            self.items.append(f'<line x1="{a:.2f}" y1="{b:.2f}" x2="{c:.2f}" y2="{d:.2f}" '
                              f'stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, pts, color="black", width=1.0):
        px, py = self._map(pts[:, 0], pts[:, 1])
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def cells(self, xs, ys, mask, color="#bbbbbb"):
        dx = (xs[1] - xs[0]) if len(xs) > 1 else 1.0
        dy = (ys[1] - ys[0]) if len(ys) > 1 else 1.0
        for i, j in zip(*np.nonzero(mask)):
            a, b = self._map(xs[j] - dx / 2, ys[i] + dy / 2)
            c, d = self._map(xs[j] + dx / 2, ys[i] - dy / 2)
            self.items.append(f'<rect x="{a:.2f}" y="{b:.2f}" width="{c - a:.2f}" height="{d - b:.2f}" '
                              f'fill="{color}" stroke="none"/>')

    def text(self) -> str:
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" height="{self.size}">\n'
                f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())


def contour_segments(xs, ys, values, level):
    """Marching squares: line segments of ``values == level`` (nan cells skipped)."""
    v = np.asarray(values, dtype=float) - level
    segs = []
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            corners = [(xs[j], ys[i], v[i, j]), (xs[j + 1], ys[i], v[i, j + 1]),
                       (xs[j + 1], ys[i + 1], v[i + 1, j + 1]), (xs[j], ys[i + 1], v[i + 1, j])]
            if any(np.isnan(c[2]) for c in corners):
                continue
            cross = []
            for k in range(4):
                (xa, ya, va), (xb, yb, vb) = corners[k], corners[(k + 1) % 4]
                if (va < 0) != (vb < 0):
                    s = va / (va - vb)
                    cross.append((xa + s * (xb - xa), ya + s * (yb - ya)))
            if len(cross) == 2:
                segs.append((cross[0], cross[1]))
            elif len(cross) == 4:
                segs.append((cross[0], cross[1]))
                segs.append((cross[2], cross[3]))
    return segs


def quiver_segments(xs, ys, u, v, stride=1, scale=None):
    gx, gy = np.meshgrid(xs[::stride], ys[::stride])
    uu, vv = u[::stride, ::stride], v[::stride, ::stride]
    mag = np.hypot(uu, vv)
    if scale is None:
        cell = (xs[-1] - xs[0]) / max(len(xs[::stride]), 1)
        scale = 0.9 * cell / max(float(np.nanmax(mag)) if mag.size else 1.0, 1e-300)
    return [((a, b), (a + scale * c, b + scale * d))
            for a, b, c, d in zip(gx.ravel(), gy.ravel(), uu.ravel(), vv.ravel())]
