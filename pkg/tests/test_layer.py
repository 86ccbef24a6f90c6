import numpy as np
import pytest

from dissipative.field import make_field
from dissipative.layer import (
    SolverError,
    adjoint_step,
    adjoint_trajectory,
    evolve,
    forward,
    perturbation_gain,
)
from dissipative.numerics import Tape, backward, eigenvalues, finite_difference_gradient
from dissipative.numerics import autodiff as ad
from dissipative.stability import ThetaScheme, stab_value

from conftest import linear_field, zero_field

THETAS = [0.0, 0.25, 0.5, 1.0]


def small_field(theta, seed=0):
    f = make_field(2, (8, 8), rng=seed, scheme=ThetaScheme(theta))
    f.base.refresh_norms(tol=1e-12)
    return f


def test_explicit_is_one_evaluation(rng):
    f = small_field(0.0)
    x = rng.standard_normal((6, 2))
    y, rep = forward(f, x)
    assert np.array_equal(y, x + f(x))
    assert rep.method == "explicit" and rep.converged


@pytest.mark.parametrize("theta", THETAS[1:])
def test_implicit_residual(theta, rng):
    f = small_field(theta)
    x = rng.uniform(-3, 3, (50, 2))
    y, rep = forward(f, x)
    z = (1 - theta) * x + theta * y
    assert rep.converged
    assert np.abs(y - x - f(z)).max() < 1e-9


def test_implicit_linear_closed_form():
    a = np.array([[0.3, 1.0], [-0.4, 0.2]])
    f = linear_field(a, 0.5, 2.0, theta=1.0)
    j = f.jacobian(np.zeros(2))
    x = np.array([[1.0, 2.0], [-3.0, 0.5]])
    y, _ = forward(f, x)
    assert np.allclose(y, np.linalg.solve(np.eye(2) - j, x.T).T, atol=1e-12)


@pytest.mark.parametrize("theta", THETAS)
def test_adjoint_inverts_forward(theta, rng):
    f = small_field(theta, seed=3)
    x = rng.uniform(-2, 2, (40, 2))
    y, _ = forward(f, x)
    xb, rep, ok = adjoint_step(f, y)
    assert ok.all()
    assert np.abs(xb - x).max() < 1e-8


@pytest.mark.parametrize("theta", THETAS)
def test_forward_gradients(theta, rng):
    f = small_field(theta, seed=5)
    x0 = rng.uniform(-2, 2, (3, 2))
    cot = rng.standard_normal((3, 2))

    def loss(params, x):
        bf = f.bind(params)
        y, _ = forward(bf, x, f.scheme)
        return ad.sum_(y * cot)

    tape = Tape()
    leaves = {k: tape.var(v) for k, v in f.params().items()}
    xv = tape.var(x0)
    g = backward(loss(leaves, xv))
    fd_x = finite_difference_gradient(lambda xx: float(loss(f.params(), xx)), x0)
    assert np.allclose(g[xv], fd_x, rtol=1e-5, atol=1e-7)
    for name in ("W0", "b1", "gamma_c", "gamma_L"):
        def fn(p, name=name):
            params = dict(f.params())
            params[name] = p
            return float(loss(params, x0))
        fd = finite_difference_gradient(fn, f.params()[name])
        assert np.allclose(g[leaves[name]], fd, rtol=1e-5, atol=1e-7), name


def test_perturbation_gain_linear(rng):
    # for a linear field with a symmetric A, eigenvectors are orthogonal and the gain is |R(lambda)|
    a = np.diag([1.0, -0.5])
    for theta in THETAS:
        f = linear_field(a, 0.5, 2.0, theta=theta)
        lam = np.diag(f.jacobian(np.zeros(2)))
        for k in range(2):
            dx = np.eye(2)[k]
            gain = perturbation_gain(f, np.array([0.3, 0.1]), dx=dx)
            assert gain == pytest.approx(abs(stab_value(theta, lam[k])), rel=1e-9)


def test_evolve_records_times(rng):
    f = small_field(0.0)
    x = rng.standard_normal((5, 2))
    tr = evolve(f, x, 7, 3)
    assert tr.times == [0, 3, 6, 7]
    assert np.array_equal(tr.states[0], x)
    manual = x
    for _ in range(7):
        manual = manual + f(manual)
    assert np.allclose(tr.states[-1], manual)


def test_evolve_zero_steps_and_zero_field(rng):
    x = rng.standard_normal((4, 2))
    tr = evolve(small_field(0.0), x, 0)
    assert tr.times == [0] and np.array_equal(tr.states[0], x)
    tr = evolve(zero_field(theta=0.5), x, 3)
    assert all(np.array_equal(s, x) for s in tr.states)
    with pytest.raises(ValueError):
        evolve(zero_field(), x, -1)


def test_evolve_reports_failing_step():
    f = small_field(0.5)
    f_scheme = ThetaScheme(0.5, fp_tol=1e-300, fp_max_iter=2, newton_max_iter=1)
    with pytest.raises(SolverError) as info:
        evolve(f, np.ones((3, 2)), 4, scheme=f_scheme)
    assert info.value.step == 1


def test_adjoint_trajectory(rng):
    f = small_field(0.5, seed=2)
    x = rng.uniform(-2, 2, (10, 2))
    tr = adjoint_trajectory(f, x, 3)
    assert len(tr) == 4 and tr.times == [0, 1, 2, 3]
    assert np.array_equal(tr.states[0], x)
    for prev, cur, ok in zip(tr.states[:-1], tr.states[1:], tr.valid[1:]):
        fwd, _ = forward(f, cur[ok])
        assert np.allclose(fwd, prev[ok], atol=1e-8)
    with pytest.raises(ValueError):
        adjoint_trajectory(f, x, 0)


def test_adjoint_explicit_at_implicit_end():
    f = small_field(1.0)
    y = np.array([[0.5, -0.2]])
    x, rep, ok = adjoint_step(f, y)
    assert rep.method == "explicit" and ok.all()
    assert np.array_equal(x, y - f(y))


def test_gain_identities(rng):
    for theta in THETAS:
        x = np.array([0.4, -0.2])
        assert perturbation_gain(zero_field(theta=theta), x, dx=np.array([0.6, 0.8])) == pytest.approx(1.0)
        # one identity layer with A = I gives J = (c + r) I = lambda I
        f = linear_field(np.eye(2), 0.5, 2.0, theta)
        lam = f.jacobian(x)[0, 0]
        for dx in (np.array([1.0, 0.0]), np.array([0.6, -0.8])):
            assert perturbation_gain(f, x, dx=dx) == pytest.approx(abs(stab_value(theta, lam)), rel=1e-12)


@pytest.mark.parametrize("theta", THETAS)
def test_gain_along_eigenvectors(theta, rng):
    f = make_field(2, (16, 16), rng=7, scheme=ThetaScheme(theta))
    checked = 0
    for x in rng.uniform(-3, 3, (20, 2)):
        y, _ = forward(f, x)
        dec = eigenvalues(f.jacobian((1 - theta) * x + theta * y), vectors=True)
        for lam, v in zip(dec.eigenvalues, dec.eigenvectors.T):
            if abs(lam.imag) < 1e-12:
                v = v.real / np.linalg.norm(v.real)
                assert perturbation_gain(f, x, dx=v) == pytest.approx(abs(stab_value(theta, lam.real)), abs=1e-6)
                checked += 1
    assert checked > 0


def test_adjoint_linear_closed_form():
    a = np.array([[0.5, 0.2], [-0.3, 0.1]])
    f = linear_field(a, 0.8, 1.2)
    j = f.jacobian(np.zeros(2))
    y = np.array([[1.0, -1.0], [2.0, 0.5]])
    x, _, ok = adjoint_step(f, y)
    inv = np.linalg.inv(np.eye(2) + j)
    assert ok.all() and np.allclose(x, y @ inv.T, atol=1e-10)
    tr = adjoint_trajectory(f, y, 3)
    for k, s in enumerate(tr.states):
        assert np.allclose(s, y @ np.linalg.matrix_power(inv, k).T, atol=1e-10)


def test_dissipative_contraction_implicit(rng):
    for _ in range(10):
        f = make_field(2, (32, 32), mode="dissipative", rng=rng, scheme=ThetaScheme(1.0))
        f.loc.gamma_c, f.loc.gamma_L = rng.normal(0, 2, 2)
        bound = max(f.disk().c_hat, f.disk().L)
        x = rng.uniform(-4, 4, (100, 2))
        d = rng.standard_normal((100, 2))
        d *= 1e-3 * rng.uniform(0.01, 1, (100, 1)) / np.linalg.norm(d, axis=1, keepdims=True)
        gap = np.linalg.norm(forward(f, x + d)[0] - forward(f, x)[0], axis=1)
        assert np.all(gap <= np.linalg.norm(d, axis=1) * (bound + 5e-2))


def test_dissipative_clouds_converge(rng):
    f = make_field(2, (16, 16), mode="dissipative", rng=rng, scheme=ThetaScheme(0.5))
    f.loc.gamma_c, f.loc.gamma_L = 0.5, 0.5
    bound = max(f.disk().c_hat, f.disk().L)
    x = rng.uniform(-3, 3, (50, 2))
    delta = 1e-6 * rng.standard_normal((50, 2))
    a, b = evolve(f, x, 10), evolve(f, x + delta, 10)
    for t, sa, sb in zip(a.times, a.states, b.states):
        gap = np.linalg.norm(sa - sb, axis=1)
        assert np.all(gap <= bound**t * np.linalg.norm(delta, axis=1) + 1e-9)
