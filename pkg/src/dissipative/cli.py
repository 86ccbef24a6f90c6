"""``dissipative`` command line: train, evolve, and export fields, stability regions and audits.

Exit status: 0 success, 1 numerical failure, 2 usage or I/O error.
Set ``DISSIPATIVE_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys

import numpy as np

from . import __version__
from .export import (
    GridExport,
    Svg,
    Table,
    contour_segments,
    header,
    points_table,
    quiver_segments,
    read_points,
    write_csv,
    write_json,
)
from .field import LocalizedField
from .layer import SolverError, adjoint_trajectory, evolve
from .numerics.linalg import ConvergenceError, SingularMatrixError, eigenvalues
from .regularize import RegularizerError, normal_direction
from .stability import StabilityDisk, disk_sup, region_grid, stab_inverse, stab_value
from .train import (
    BUILTIN_CONFIGS,
    CheckpointError,
    PointCloud,
    TrainingDiverged,
    builtin_config,
    builtin_data,
    load_checkpoint,
    load_config,
    nearest_distance,
    save_checkpoint,
    train,
    uniform_cloud,
)
from .train.loop import HISTORY_KEYS, LossTermError

log = logging.getLogger("dissipative")

LOG_ENV = "DISSIPATIVE_LOG"
DATASETS = ("scurve", "circle")


class UsageError(Exception):
    pass


NUMERICAL = (SolverError, TrainingDiverged, LossTermError, ConvergenceError, SingularMatrixError,
             RegularizerError, FloatingPointError, ZeroDivisionError)


def _command_line(argv) -> str:
    return " ".join(shlex.quote(a) for a in ["dissipative", *argv])


def _load_model(path) -> LocalizedField:
    if not os.path.exists(path):
        raise UsageError(f"model file not found: {path}")
    try:
        return load_checkpoint(path).field
    except CheckpointError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _load_points(path) -> np.ndarray:
    if not os.path.exists(path):
        raise UsageError(f"points file not found: {path}")
    try:
        return read_points(path)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _reference(source: str | None, model_path: str):
    """Reference cloud: a CSV path, or ``builtin`` for the model's training data."""
    if source is None:
        return None
    if source == "builtin":
        return builtin_data(load_checkpoint(model_path).config).points
    return _load_points(source)


def _check_dim(f: LocalizedField, pts: np.ndarray, path):
    if pts.size and pts.shape[1] != f.dim:
        raise UsageError(f"{path}: points have dimension {pts.shape[1]}, model expects {f.dim}")


# --- commands --------------------------------------------------------------

def cmd_train(args, cmdline):
    if os.path.exists(args.config):
        try:
            cfg = load_config(args.config)
        except ValueError as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
    elif args.config in BUILTIN_CONFIGS:
        cfg = builtin_config(args.config)
    else:
        raise UsageError(f"config not found: {args.config} (not a file or one of {sorted(BUILTIN_CONFIGS)})")
    over = {}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.seed is not None:
        over["seed"] = args.seed
    if args.data is not None and args.data in DATASETS:
        over["dataset"] = args.data
    cfg = cfg.replace(**over) if over else cfg
    data = None
    if args.data is not None and args.data not in DATASETS:
        data = PointCloud(_load_points(args.data))
    ckpt, hist = train(cfg, data)
    save_checkpoint(ckpt, args.out)
    hpath = args.history or _sibling(args.out, ".history.csv")
    rows = np.array([[r[k] for k in HISTORY_KEYS] for r in hist.rows], dtype=float).reshape(-1, len(HISTORY_KEYS))
    write_csv(hpath, Table(list(HISTORY_KEYS), rows, header(cmdline, cfg.seed)))
    print(f"wrote {args.out} and {hpath}")


def _sibling(path, suffix):
    root, ext = os.path.splitext(path)
    return (root if ext == ".json" else path) + suffix


def cmd_evolve(args, cmdline):
    f = _load_model(args.model)
    if args.steps < 0 or args.every < 1:
        raise UsageError("steps must be >= 0 and every >= 1")
    if args.points:
        x0 = _load_points(args.points)
        _check_dim(f, x0, args.points)
        seed = None
    else:
        lo, hi = args.bounds
        x0 = uniform_cloud(args.random, lo, hi, f.dim, seed=args.seed)
        seed = args.seed
    ref = _reference(args.reference, args.model)
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        traj = evolve(f, x0, args.steps, args.every)
    except SolverError as exc:
        raise SolverError(f"evolve: {exc} (step {exc.step})", exc.step, exc.report) from exc
    summary = {"times": traj.times, "files": [], "version": __version__, "command": cmdline, "seed": seed}
    if ref is not None:
        summary["mean_distance"] = [float(nearest_distance(s, ref).mean()) if len(s) else 0.0 for s in traj.states]
    for t, s in zip(traj.times, traj.states):
        name = f"t{t:05d}.csv"
        write_csv(os.path.join(args.out_dir, name), points_table(s, header(cmdline, seed, time=t)))
        summary["files"].append(name)
        if args.svg and f.dim == 2:
            svg = Svg((-5, 5, -5, 5))
            if ref is not None:
                svg.points(ref, "#999999", 1.0)
            svg.points(s, "black", 1.5)
            svg.save(os.path.join(args.out_dir, f"t{t:05d}.svg"))
    write_json(os.path.join(args.out_dir, "summary.json"), summary)
    print(f"wrote {len(traj.times)} snapshots to {args.out_dir}")


def field_grid(f: LocalizedField, bounds, resolution: int) -> GridExport:
    if f.dim != 2:
        raise UsageError(f"grid export is 2D only; model has dimension {f.dim}")
    xmin, xmax, ymin, ymax = bounds
    xs, ys = np.linspace(xmin, xmax, resolution), np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    fx = f(np.stack([gx.ravel(), gy.ravel()], axis=1))
    n = resolution
    return GridExport(tuple(bounds), n, {
        "Fx": fx[:, 0].reshape(n, n),
        "Fy": fx[:, 1].reshape(n, n),
        "F2": (fx * fx).sum(axis=1).reshape(n, n),
    })


def cmd_field(args, cmdline):
    f = _load_model(args.model)
    grid = field_grid(f, args.bounds, args.resolution)
    write_csv(args.out, grid.to_table(header(cmdline)))
    if args.svg:
        xs, ys = grid.axes()
        svg = Svg(args.bounds)
        stride = max(1, args.resolution // 25)
        svg.segments(quiver_segments(xs, ys, grid.channels["Fx"], grid.channels["Fy"], stride), "#335599", 0.8)
        f2 = grid.channels["F2"]
        top = float(np.nanmax(f2)) if f2.size else 0.0
        sub = max(1, args.resolution // 100)
        for level in top * np.array([1e-3, 1e-2, 0.05, 0.2]):
            if level > 0:
                svg.segments(contour_segments(xs[::sub], ys[::sub], f2[::sub, ::sub], level), "black", 0.7)
        svg.save(_sibling(args.out, ".svg") if not args.out.endswith(".csv") else args.out[:-4] + ".svg")
    print(f"wrote {args.out}")


def cmd_stability(args, cmdline):
    if not 0.0 <= args.theta <= 1.0:
        raise UsageError("theta must lie in [0, 1]")
    xmin, xmax, ymin, ymax = args.bounds
    g = region_grid(args.theta, (xmin, xmax), (ymin, ymax), args.resolution)
    grid = GridExport(tuple(args.bounds), args.resolution,
                      {"abs_R": g.magnitude, "in_region": g.mask.astype(float), "pole": g.pole.astype(float)})
    write_csv(args.out, grid.to_table(header(cmdline, theta=args.theta)))
    stem = args.out[:-4] if args.out.endswith(".csv") else args.out
    disk = None
    if args.disk is not None:
        c_hat, L = args.disk
        try:
            disk = StabilityDisk.from_values(args.theta, c_hat, L)
            sup, at = disk_sup(args.theta, disk)
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"invalid disk (c_hat={c_hat}, L={L}): {exc}") from exc
        write_json(stem + ".disk.json", {
            "theta": args.theta, "c_hat": c_hat, "L": L,
            "c": disk.center, "r": disk.radius,
            "point_c_hat": float(stab_inverse(args.theta, c_hat)),
            "point_L": float(stab_inverse(args.theta, L)),
            "disk_sup": sup, "disk_sup_at": [at.real, at.imag], "max_c_hat_L": max(c_hat, L),
            "version": __version__, "command": cmdline,
        })
    if args.svg:
        svg = Svg(args.bounds)
        sub = max(1, args.resolution // 200)
        svg.cells(g.re[::sub], g.im[::sub], g.mask[::sub, ::sub])
        for level in (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0):
            svg.segments(contour_segments(g.re[::sub], g.im[::sub], g.magnitude[::sub, ::sub], level), "black", 0.6)
        if disk is not None:
            phi = np.linspace(0, 2 * np.pi, 200)
            svg.polyline(np.stack([disk.center + disk.radius * np.cos(phi), disk.radius * np.sin(phi)], 1), "red", 1.2)
            svg.points(np.array([[disk.center, 0.0], [disk.center + disk.radius, 0.0]]), "red", 3)
        svg.save(stem + ".svg")
    print(f"wrote {args.out}")


def audit_points(f: LocalizedField, pts: np.ndarray):
    """Per-point eigenvalue audit rows and the aggregate verdict."""
    d = f.dim
    disk = f.disk()
    th = f.theta
    rows, offenders, failed = [], [], []
    jac = f.jacobian(pts) if len(pts) else np.zeros((0, d, d))
    for i, (p, j) in enumerate(zip(pts, jac)):
        try:
            lam = eigenvalues(j).eigenvalues
            ok_eig = 1.0
        except ConvergenceError:
            lam = np.full(d, np.nan + 0j)
            ok_eig = 0.0
            failed.append(i)
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = np.abs((1 + (1 - th) * lam) / (1 - th * lam))
        inside = mag < 1.0
        dist = np.maximum(0.0, np.abs(lam - disk.center) - disk.radius)
        if ok_eig and not inside.all():
            offenders.append(i)
        row = list(p)
        for k in range(d):
            row += [lam[k].real, lam[k].imag, mag[k], float(inside[k]), dist[k]]
        row.append(ok_eig)
        rows.append(row)
    cols = [f"x{k}" for k in range(d)] if d != 2 else ["x", "y"]
    for k in range(d):
        cols += [f"lam{k}_re", f"lam{k}_im", f"absR{k}", f"in_region{k}", f"disk_dist{k}"]
    cols.append("eig_ok")
    verdict = not offenders and not failed
    return Table(cols, np.array(rows, dtype=float).reshape(len(rows), len(cols))), verdict, offenders, failed


def cmd_eigencheck(args, cmdline):
    f = _load_model(args.model)
    pts = _load_points(args.points)
    _check_dim(f, pts, args.points)
    table, verdict, offenders, failed = audit_points(f, pts.reshape(-1, f.dim))
    table.meta = header(cmdline, dissipative="yes" if verdict else "no")
    write_csv(args.out, table)
    loc = f.localization()
    stem = args.out[:-4] if args.out.endswith(".csv") else args.out
    write_json(stem + ".json", {
        "dissipative": "yes" if verdict else "no", "points": int(len(table.data)),
        "offenders": offenders, "eigensolver_failures": failed,
        "c": float(loc.c), "r": float(loc.r), "c_hat": float(loc.c_hat), "L": float(loc.L), "theta": f.theta,
        "version": __version__, "command": cmdline,
    })
    print(f"dissipative: {'yes' if verdict else 'no'} ({len(offenders)} offending points of {len(table.data)})")


def cmd_adjoint(args, cmdline):
    f = _load_model(args.model)
    if args.steps < 1:
        raise UsageError("steps must be >= 1")
    if not args.alpha > 0:
        raise UsageError("alpha must be positive")
    pts = _load_points(args.points).reshape(-1, f.dim) if args.points else builtin_data(
        load_checkpoint(args.model).config).points
    _check_dim(f, pts, args.points)
    rng = np.random.default_rng(args.seed)
    n, degenerate = normal_direction(f, pts, args.eps_scale, rng)
    traj = adjoint_trajectory(f, pts + args.alpha * n, args.steps)
    d = f.dim
    states = np.stack(traj.states, axis=1)  # (N, steps+1, d)
    valid = np.stack(traj.valid, axis=1)
    rows = []
    for i in range(len(pts)):
        for j in range(args.steps + 1):
            rows.append([i, j, *states[i, j], float(valid[i, j]), float(degenerate[i])])
    cols = ["point", "step", *(["x", "y"] if d == 2 else [f"x{k}" for k in range(d)]), "valid", "degenerate"]
    write_csv(args.out, Table(cols, np.array(rows, dtype=float).reshape(len(rows), len(cols)),
                              header(cmdline, args.seed, alpha=args.alpha, steps=args.steps)))
    ref = _reference(args.reference, args.model) if args.reference else pts
    stem = args.out[:-4] if args.out.endswith(".csv") else args.out
    summary = {"points": int(len(pts)), "degenerate": int(degenerate.sum()),
               "failed": int((~valid[:, -1]).sum()) if len(pts) else 0,
               "mean_max_distance": max_distance_statistic(states, valid, ref),
               "version": __version__, "command": cmdline, "seed": args.seed}
    write_json(stem + ".json", summary)
    if args.svg and d == 2:
        svg = Svg((-5, 5, -5, 5))
        svg.points(ref, "#999999", 1.0)
        for i in range(len(pts)):
            svg.polyline(states[i][valid[i]], "#cc3311", 0.6)
        svg.save(stem + ".svg")
    if degenerate.any():
        log.warning("%d points have a degenerate level-set normal", int(degenerate.sum()))
    print(f"wrote {args.out}")


def max_distance_statistic(states, valid, reference) -> float:
    """Mean over trajectories of the largest distance to ``reference`` along valid states."""
    if not len(states):
        return 0.0
    n, k, d = states.shape
    dist = nearest_distance(states.reshape(-1, d), reference).reshape(n, k)
    return float(np.where(valid, dist, 0.0).max(axis=1).mean())


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dissipative", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dissipative {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a field and write a checkpoint plus history CSV")
    t.add_argument("config", help="config file, or a builtin name: " + ", ".join(sorted(BUILTIN_CONFIGS)))
    t.add_argument("--data", help="points CSV, or a builtin dataset (scurve, circle)")
    t.add_argument("--out", required=True, help="checkpoint path (.json)")
    t.add_argument("--history", help="history CSV path (default: next to the checkpoint)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)

    e = sub.add_parser("evolve", help="apply the trained layer repeatedly to a point cloud")
    e.add_argument("model")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", help="CSV of starting points")
    src.add_argument("--random", type=int, metavar="N", help="N uniform random points")
    e.add_argument("--bounds", type=float, nargs=2, default=(-4.0, 4.0), metavar=("LOW", "HIGH"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--every", type=int, default=5)
    e.add_argument("--reference", help="CSV of reference points, or 'builtin' for the training data")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--svg", action="store_true")

    fl = sub.add_parser("field", help="export the vector field and its squared norm on a grid")
    fl.add_argument("model")
    fl.add_argument("--bounds", type=float, nargs=4, default=(-5.0, 5.0, -5.0, 5.0),
                    metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    fl.add_argument("--resolution", type=int, default=401)
    fl.add_argument("--out", required=True)
    fl.add_argument("--svg", action="store_true")

    s = sub.add_parser("stability", help="export |R_theta| and the stability region on a grid")
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--bounds", type=float, nargs=4, default=(-5.0, 5.0, -5.0, 5.0),
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    s.add_argument("--resolution", type=int, default=401)
    s.add_argument("--disk", type=float, nargs=2, metavar=("C_HAT", "L"))
    s.add_argument("--out", required=True)
    s.add_argument("--svg", action="store_true")

    c = sub.add_parser("eigencheck", help="audit Jacobian eigenvalues against the stability region")
    c.add_argument("model")
    c.add_argument("--points", required=True)
    c.add_argument("--out", required=True)

    a = sub.add_parser("adjoint", help="export adjoint trajectories started off the data")
    a.add_argument("model")
    a.add_argument("--points", help="CSV of data points (default: the model's builtin training data)")
    a.add_argument("--alpha", type=float, default=0.5)
    a.add_argument("--steps", type=int, default=1)
    a.add_argument("--eps-scale", type=float, default=1e-2)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--reference", help="reference cloud for the distance statistic (default: the points)")
    a.add_argument("--out", required=True)
    a.add_argument("--svg", action="store_true")
    return p


COMMANDS = {
    "train": cmd_train, "evolve": cmd_evolve, "field": cmd_field,
    "stability": cmd_stability, "eigencheck": cmd_eigencheck, "adjoint": cmd_adjoint,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, _command_line(argv))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
