"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training criteria (9-11) train the shipped builtin configs from scratch;
expect several minutes for this module on one CPU core.
"""

import json
import time

import numpy as np
import pytest

from dissipative.cli import main as cli_main
from dissipative.export import read_csv
from dissipative.field import make_field
from dissipative.layer import adjoint_step, adjoint_trajectory, evolve, forward
from dissipative.numerics import eigenvalues, hutchinson_frobenius_sq
from dissipative.regularize import RegWeights, draw_perturbation, r_adj, r_f, r_lambda, r_n
from dissipative.stability import StabilityDisk, ThetaScheme, disk_sup, region_grid, stab_inverse, stab_value
from dissipative.train import builtin_config, builtin_data, nearest_distance, save_checkpoint, train, uniform_cloud

from conftest import ACCEPTANCE_LINES, linear_field
from gradcheck import relative_error


def report(n, title, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# --- shared training runs ------------------------------------------------

_RUNS = {}


def trained(name):
    """Train a builtin config once per session; returns (checkpoint, history, seconds)."""
    if name not in _RUNS:
        t0 = time.perf_counter()
        ckpt, hist = train(builtin_config(name))
        _RUNS[name] = (ckpt, hist, time.perf_counter() - t0)
    return _RUNS[name]


def moving_average_drop(history, window=100):
    total = np.asarray(history.column("total"))
    return total[-window:].mean() < total[:window].mean()


def attraction(field, reference, steps=20, every=5, seed=2024):
    """Mean nearest-reference distance of an evolving uniform cloud at the recorded times."""
    x0 = uniform_cloud(500, -4.0, 4.0, seed=seed)
    t0 = time.perf_counter()
    tr = evolve(field, x0, steps, every)
    dist = [float(nearest_distance(s, reference).mean()) for s in tr.states]
    return dict(zip(tr.times, dist)), time.perf_counter() - t0


# --- 1-3: stability function ------------------------------------------------

def test_criterion_1_stability_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    theta = rng.uniform(0.0, 1.0, 1000)
    z = rng.normal(0.0, 3.0, 1000) + 1j * rng.normal(0.0, 3.0, 1000)
    err = max(abs(stab_inverse(t, stab_value(t, zz)) - zz) / (1 + abs(zz)) for t, zz in zip(theta, z))
    at_zero = all(stab_value(t, 0.0) == 1.0 for t in theta)
    y = rng.uniform(-100.0, 100.0, 1000)
    unit = np.abs(np.abs(stab_value(0.5, 1j * y)) - 1.0).max()
    elapsed = time.perf_counter() - t0
    ok = err < 1e-10 and at_zero and unit < 1e-12 and elapsed < 1.0
    report(1, "stability-function identities", ok,
           f"round trip {err:.1e}, R(0)=1 {at_zero}, |R_1/2(iy)|-1 {unit:.1e}, {elapsed:.2f}s")


def _boundary_distance(theta, z):
    if theta == 0.0:
        return np.abs(np.abs(z + 1) - 1)
    if theta == 0.5:
        return np.abs(z.real)
    return np.abs(np.abs(z - 1) - 1)


def test_criterion_2_region_shapes():
    t0 = time.perf_counter()
    oracles = {0.0: lambda z: np.abs(z + 1) < 1, 0.5: lambda z: z.real < 0, 1.0: lambda z: np.abs(z - 1) > 1}
    parts, ok = [], True
    for theta, oracle in oracles.items():
        g = region_grid(theta, n=401)
        z = g.re[None, :] + 1j * g.im[:, None]
        bad = g.mask != oracle(z)
        frac = bad.mean()
        h = g.re[1] - g.re[0]
        boundary_only = bool(np.all(_boundary_distance(theta, z[bad]) <= h))
        ok &= frac <= 0.005 and boundary_only
        parts.append(f"theta={theta}: {100 * frac:.3f}% differ, boundary-only {boundary_only}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 5.0
    report(2, "stability region shapes on a 401x401 grid", ok, "; ".join(parts) + f", {elapsed:.2f}s")


def test_criterion_3_disk_sup():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_val = worst_arg = 0.0
    for _ in range(100):
        theta = rng.uniform(0.0, 1.0)
        c_hat = rng.uniform(0.01, 1.0)
        L = rng.uniform(0.01, 5.0)
        disk = StabilityDisk.from_values(theta, c_hat, L)
        sup, at = disk_sup(theta, disk)
        worst_val = max(worst_val, abs(sup - max(c_hat, L)))
        worst_arg = max(worst_arg, abs(at - (disk.center + disk.radius)))
    elapsed = time.perf_counter() - t0
    ok = worst_val < 1e-6 and worst_arg < 1e-9 and elapsed < 5.0
    report(3, "disk sup equals max(c_hat, L), attained at c + r", ok,
           f"max |sup - max| {worst_val:.1e}, max |argmax - (c+r)| {worst_arg:.1e}, {elapsed:.2f}s")


# --- 4-5: field construction ----------------------------------------------

def test_criterion_4_dissipative_audit():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    outside = expanding = 0
    worst = 0.0
    for k in range(20):
        theta = float(rng.uniform(0.0, 1.0))
        f = make_field(2, (32, 32), mode="dissipative", rng=rng, scheme=ThetaScheme(theta))
        f.loc.gamma_c, f.loc.gamma_L = rng.normal(0.0, 2.0, 2)
        disk = f.disk()
        for j in f.jacobian(rng.uniform(-5.0, 5.0, (100, 2))):
            lam = eigenvalues(j).eigenvalues
            outside += int(np.sum(np.abs(lam - disk.center) > disk.radius + 1e-6))
            mag = np.abs(stab_value(theta, lam))
            expanding += int(np.sum(mag >= 1.0))
            worst = max(worst, float(mag.max()))
    elapsed = time.perf_counter() - t0
    ok = outside == 0 and expanding == 0 and elapsed < 30.0
    report(4, "dissipative-mode eigenvalues inside B(c, r) and the stability region", ok,
           f"{outside} outside disk, {expanding} with |R|>=1, max |R| {worst:.4f}, {elapsed:.1f}s")


def test_criterion_5_spectral_normalization():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        f = make_field(2, (32, 32), rng=rng)
        bj = f.bind().base_jacobian(rng.uniform(-5.0, 5.0, (100, 2)))
        worst = max(worst, float(np.linalg.norm(bj, 2, axis=(1, 2)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1 + 5e-3 and elapsed < 30.0
    report(5, "normalized base field is 1-Lipschitz", ok, f"max ||J||_2 {worst:.6f} over 1000 points, {elapsed:.1f}s")


# --- 6-8: solvers and estimators ------------------------------------------

def test_criterion_6_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = {}
    for theta in (0.0, 0.25, 0.5, 1.0):
        for _ in range(20):
            scheme = ThetaScheme(theta, fp_tol=1e-13)
            f = make_field(2, (6, 6), rng=rng, scheme=scheme)
            f.loc.gamma_c, f.loc.gamma_L = rng.normal(0.0, 1.0, 2)
            x0 = rng.uniform(-3.0, 3.0, (4, 2))
            w = RegWeights(adjoint_steps=2, alpha_max=1.0)
            pert = draw_perturbation(f, x0, w, rng)
            traj = adjoint_trajectory(f, x0 + pert.offset, w.adjoint_steps, scheme)
            cot = rng.standard_normal(x0.shape)
            checks = {
                "forward": lambda bf, x: (forward(bf, x, scheme)[0] * cot).sum(),
                "r_f": lambda bf, x: r_f(bf, x),
                "r_lambda": lambda bf, x: r_lambda(bf, x, theta),
                "r_n": lambda bf, x: r_n(bf, x, w, perturbation=pert),
                # adjoint states are constants of the loss, so differences hold them fixed too
                "r_adj": lambda bf, x: r_adj(bf, x, w, scheme, perturbation=pert, trajectory=traj),
            }
            for name, loss in checks.items():
                key = (name, theta)
                worst[key] = max(worst.get(key, 0.0), relative_error(f, loss, x0))
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top < 1e-4 and elapsed < 120.0
    per_fn = ", ".join(f"{n} {max(v for (m, _), v in worst.items() if m == n):.1e}"
                       for n in ("forward", "r_f", "r_lambda", "r_n", "r_adj"))
    report(6, "tape gradients vs central differences", ok, f"max rel err {per_fn}; {elapsed:.1f}s")


def test_criterion_7_solver_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_lin = 0.0
    for _ in range(20):
        a = rng.standard_normal((2, 2))
        f = linear_field(a, rng.uniform(0.1, 1.0), rng.uniform(1.0, 5.0), theta=1.0)
        j = f.jacobian(np.zeros(2))
        x = rng.uniform(-4, 4, (50, 2))
        y, _ = forward(f, x)
        exact = np.linalg.solve(np.eye(2) - j, x.T).T
        worst_lin = max(worst_lin, float(np.abs(y - exact).max()))
    worst_rt = 0.0
    for theta in (0.0, 0.25, 0.5, 1.0):
        scheme = ThetaScheme(theta)
        f = make_field(2, (32, 32), rng=rng, scheme=scheme)
        x = rng.uniform(-4, 4, (1000, 2))
        y, _ = forward(f, x)
        xb, _, ok_pts = adjoint_step(f, y)
        err = np.where(ok_pts, np.abs(xb - x).max(axis=1), np.inf)
        worst_rt = max(worst_rt, float(err.max()))
    tol = 10 * ThetaScheme().fp_tol
    elapsed = time.perf_counter() - t0
    ok = worst_lin < 1e-9 and worst_rt < tol and elapsed < 10.0
    report(7, "implicit solve oracles", ok,
           f"theta=1 linear error {worst_lin:.1e}, adjoint(forward(x)) error {worst_rt:.1e} < {tol:.0e}, {elapsed:.1f}s")


def test_criterion_8_hutchinson():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    lines, ok = [], True
    for k in range(3):
        m = rng.standard_normal((5, 5))
        exact = float(np.trace(m.T @ m))
        runs = np.array([hutchinson_frobenius_sq(lambda v: m @ v, 5, 1000, rng) for _ in range(100)])
        sigma = runs.std(ddof=1) / np.sqrt(len(runs))
        z = abs(runs.mean() - exact) / sigma
        ok &= z <= 3.0
        lines.append(f"map {k}: {z:.2f} sigma")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10.0
    report(8, "Hutchinson estimate of ||M||_F^2 is unbiased", ok, ", ".join(lines) + f", {elapsed:.1f}s")


# --- 9-11: desk-scale training runs ----------------------------------------

def test_criterion_9_scurve_attraction():
    ckpt, hist, train_s = trained("scurve-1step")
    data = builtin_data(ckpt.config).points
    rf0 = hist.column("r_f")[0]
    rf_end = float(r_f(ckpt.field, data))
    dist, ev_s = attraction(ckpt.field, data)
    seq = [dist[t] for t in (0, 5, 10, 20)]
    monotone = all(b <= 1.05 * a for a, b in zip(seq, seq[1:]))
    ratio = dist[20] / dist[0]
    elapsed = train_s + ev_s
    ok = rf_end < 0.05 * rf0 and ratio < 0.25 and monotone and elapsed < 600 and len(hist.rows) <= 10_000
    report(9, "s-curve model attracts a uniform cloud", ok,
           f"r_f {rf_end:.2e}/{rf0:.2e} = {100 * rf_end / rf0:.2f}%, distance t=0,5,10,20 "
           f"{', '.join(f'{d:.3f}' for d in seq)}, t=20 ratio {ratio:.3f}, {len(hist.rows)} steps, {elapsed:.0f}s")


def _circle_stats(name):
    ckpt, hist, train_s = trained(name)
    data = builtin_data(ckpt.config).points
    phi = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    ring = ckpt.config.radius * np.stack([np.cos(phi), np.sin(phi)], 1)
    f_norm = float(np.linalg.norm(ckpt.field(ring), axis=1).mean())
    dist, ev_s = attraction(ckpt.field, data)
    return f_norm, dist[20], train_s + ev_s


def test_criterion_10_circle_L_sensitivity():
    f1, d1, s1 = _circle_stats("circle-L1")
    f5, d5, s5 = _circle_stats("circle-L5")
    elapsed = s1 + s5
    ok = d5 <= d1 and elapsed < 900
    report(10, "circle-L5 attracts at least as well as circle-L1", ok,
           f"mean ||F|| on circle L1 {f1:.3e} / L5 {f5:.3e}; t=20 mean distance L1 {d1:.4f} / L5 {d5:.4f}; {elapsed:.0f}s")


def test_criterion_11_adjoint_exploration(tmp_path_factory):
    out = tmp_path_factory.mktemp("adjoint")
    stats = {}
    for name, steps in (("scurve-1step", 1), ("scurve-3step", 3)):
        ckpt, _, _ = trained(name)
        model = out / f"{name}.json"
        save_checkpoint(ckpt, model)
        csv = out / f"{name}-adjoint.csv"
        code = cli_main(["adjoint", str(model), "--steps", str(steps), "--alpha", "0.5", "--seed", "0",
                         "--out", str(csv), "--svg"])
        assert code == 0
        stats[name] = json.loads((out / f"{name}-adjoint.json").read_text())["mean_max_distance"]
        assert len(read_csv(csv).data) == (steps + 1) * len(builtin_data(ckpt.config).points)
    ok = stats["scurve-3step"] > stats["scurve-1step"]
    report(11, "3-step adjoint trajectories explore farther than 1-step", ok,
           f"mean max distance 1-step {stats['scurve-1step']:.4f} / 3-step {stats['scurve-3step']:.4f}; exports in {out}")


@pytest.mark.parametrize("name", ["scurve-1step", "scurve-3step", "circle-L1", "circle-L5"])
def test_training_loss_moving_average_decreases(name):
    _, hist, _ = trained(name)
    assert moving_average_drop(hist)
