"""Spectrally normalized and eigenvalue-localized vector fields.

The base field ``Ft`` is an MLP whose weight matrices are divided by
``|sigma'|_max * ||W||`` in every forward pass, so ``Lip(Ft) <= 1`` for every
input. The layer field is ``F(x) = c x + r Ft(x)`` with ``(c, r)`` derived
from two learnable scalars through the inverse stability function, which
puts every Jacobian eigenvalue in the disk ``B(c, r)``.

All evaluation goes through :class:`BoundField`, which works identically on
numpy arrays and on tape variables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from . import numerics as nm
from .numerics import autodiff as ad
from .numerics.linalg import power_iteration, spectral_norm
from .stability import PoleError, StabilityDisk, ThetaScheme, disk_sup, stab_inverse

NORM_FLOOR = 1e-8

# sup |sigma'| used for normalization; 1 is a valid bound for all of these
ACTIVATION_BOUND = {"tanh": 1.0, "relu": 1.0, "sigmoid": 1.0, "identity": 1.0}


def _activate(name, a):
    if name == "tanh":
        return ad.tanh(a)
    if name == "sigmoid":
        return ad.sigmoid(a)
    if name == "relu":
        return ad.relu(a)
    if name == "identity":
        return a
    raise ValueError(f"unknown activation {name!r}")


def _activation_slope(name, a, h):
    """sigma'(a) expressed through the pre-activation ``a`` and output ``h``."""
    if name == "tanh":
        return 1.0 - h * h
    if name == "sigmoid":
        return h * (1.0 - h)
    if name == "relu":
        return ad.step(a)
    if name == "identity":
        return np.ones_like(ad.value(a))
    raise ValueError(f"unknown activation {name!r}")


class DomainError(ValueError):
    pass


@dataclass
class MlpField:
    """Affine maps alternating with an elementwise activation.

    ``weights[i]`` has shape (out, in). The last layer is affine only unless
    ``output_activation`` is set. ``u``/``v`` hold the warm-started power
    iteration vectors of each weight matrix.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    output_activation: bool = False
    u: list[np.ndarray] = dc_field(default_factory=list)
    v: list[np.ndarray] = dc_field(default_factory=list)

    def __post_init__(self):
        if self.activation not in ACTIVATION_BOUND:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, nonempty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} != {self.weights[i - 1].shape[0]}")
        if self.weights[0].shape[1] != self.weights[-1].shape[0]:
            raise ValueError("input and output dimension must agree")
        if not self.v:
            self.v = [np.ones(w.shape[1]) / np.sqrt(w.shape[1]) for w in self.weights]
            self.u = [np.zeros(w.shape[0]) for w in self.weights]
            self.refresh_norms(tol=1e-9)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def sigma_bound(self) -> float:
        return ACTIVATION_BOUND[self.activation]

    @classmethod
    def init(cls, dim: int, widths=(32, 32), activation="tanh", rng=None, *, bias_scale=0.5, output_activation=False):
        rng = np.random.default_rng(rng)
        sizes = [dim, *widths, dim]
        weights = [rng.standard_normal((o, i)) / np.sqrt(i) for i, o in zip(sizes[:-1], sizes[1:])]
        biases = [bias_scale * rng.standard_normal(o) for o in sizes[1:]]
        return cls(weights, biases, activation, output_activation)

    def refresh_norms(self, iters: int | None = None, tol: float = 1e-9, min_iters: int = 50) -> list[float]:
        """Advance the power iteration for every layer.

        ``iters`` fixes the step count (training uses 1); otherwise iterate
        to relative tolerance ``tol`` with at least ``min_iters`` steps.
        """
        sigmas = []
        for i, w in enumerate(self.weights):
            if iters is None:
                s, rep = spectral_norm(w, tol=tol, max_iter=max(min_iters, 1000), v0=self.v[i])
                s, self.u[i], self.v[i] = power_iteration(w, self.v[i], max(min_iters, rep.iterations))
            else:
                s, self.u[i], self.v[i] = power_iteration(w, self.v[i], iters)
            sigmas.append(s)
        return sigmas

    def copy(self) -> "MlpField":
        return MlpField(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation,
            self.output_activation, [u.copy() for u in self.u], [v.copy() for v in self.v],
        )


@dataclass
class LocalizationParams:
    mode: str = "ranged"  # or "dissipative"
    gamma_c: float = 0.0
    gamma_L: float = 0.0
    c_hat_range: tuple[float, float] = (0.5, 1.0)
    L_range: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        if self.mode not in ("ranged", "dissipative"):
            raise ValueError(f"unknown localization mode {self.mode!r}")
        if self.mode == "ranged" and (min(self.c_hat_range) <= 0 or min(self.L_range) <= 0):
            raise ValueError("c_hat and L range bounds must be positive")


class Localization(NamedTuple):
    c: object
    r: object
    c_hat: object
    L: object


def localization(p: LocalizationParams, theta: float, gamma_c=None, gamma_L=None) -> Localization:
    """Disk center/radius from the localization parameters.

    ``gamma_c``/``gamma_L`` override the stored scalars (pass tape variables
    to differentiate).
    """
    gc = p.gamma_c if gamma_c is None else gamma_c
    gl = p.gamma_L if gamma_L is None else gamma_L
    if p.mode == "dissipative":
        c_hat = 1.0 - ad.sigmoid(gc)
        L = 1.0 - ad.sigmoid(gl)
    else:
        c1, c2 = p.c_hat_range
        l1, l2 = p.L_range
        c_hat = c1 + ad.sigmoid(gc) * (c2 - c1)
        L = l1 + ad.sigmoid(gl) * (l2 - l1)
    if theta == 1.0 and (float(ad.value(c_hat)) <= 0 or float(ad.value(L)) <= 0):
        raise DomainError("theta = 1 needs c_hat > 0 and L > 0")
    try:
        c = stab_inverse(theta, c_hat)
        edge = stab_inverse(theta, L)
    except PoleError as exc:
        raise DomainError(str(exc)) from exc
    r = ad.maximum(edge - c, 0.0)
    return Localization(c, r, c_hat, L)


def normalize_weights(f: MlpField, tol: float = 1e-9) -> list[np.ndarray]:
    """Converge the power iterations and return the normalized matrices."""
    f.refresh_norms(tol=tol)
    return [np.asarray(w) for w in BoundField.for_mlp(f).normalized_weights()]


class BoundField:
    """A field evaluated at one parameter snapshot.

    ``values`` maps ``W{i}``, ``b{i}``, ``gamma_c``, ``gamma_L`` to numpy
    arrays or tape variables. Normalized weights and ``(c, r)`` are computed
    once per binding.
    """

    def __init__(self, mlp: MlpField, loc: LocalizationParams | None, theta: float, values: dict):
        self.mlp = mlp
        self.loc = loc
        self.theta = theta
        self.values = values
        self._wn = None
        self._local = None

    @classmethod
    def for_mlp(cls, mlp: MlpField) -> "BoundField":
        values = {f"W{i}": w for i, w in enumerate(mlp.weights)}
        values.update({f"b{i}": b for i, b in enumerate(mlp.biases)})
        return cls(mlp, None, 0.0, values)

    @property
    def dim(self):
        return self.mlp.dim

    def normalized_weights(self):
        if self._wn is None:
            out = []
            bound = self.mlp.sigma_bound
            for i in range(len(self.mlp.weights)):
                w = self.values[f"W{i}"]
                u, v = self.mlp.u[i], self.mlp.v[i]
                sigma = ad.sum_(u[:, None] * w * v[None, :])
                if float(ad.value(sigma)) < NORM_FLOOR:
                    out.append(w)
                else:
                    out.append(w / (bound * sigma))
            self._wn = out
        return self._wn

    def localization(self) -> Localization:
        if self._local is None:
            if self.loc is None:
                self._local = Localization(0.0, 1.0, None, None)
            else:
                self._local = localization(self.loc, self.theta, self.values["gamma_c"], self.values["gamma_L"])
        return self._local

    def _check(self, x):
        xv = ad.value(x)
        if xv.ndim not in (1, 2) or xv.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {xv.shape}")
        return xv.ndim == 1

    def _layers(self, x, tangents: bool):
        """Base field value and, optionally, its Jacobian via tangent propagation."""
        ws = self.normalized_weights()
        n_layers = len(ws)
        h = x
        t = None
        for i, w in enumerate(ws):
            a = ad.matmul(h, ad.swapaxes(w, 0, 1)) + self.values[f"b{i}"]
            last = i == n_layers - 1
            act = self.mlp.output_activation or not last
            h = _activate(self.mlp.activation, a) if act else a
            if tangents:
                # t: (N, width, d) directional derivatives along each input axis
                t = ad.reshape(w, (1,) + ad.value(w).shape) if t is None else w @ t
                if act:
                    slope = _activation_slope(self.mlp.activation, a, h)
                    t = ad.reshape(slope, ad.value(slope).shape + (1,)) * t
        return h, t

    def base(self, x):
        """``Ft(x)``; ``x`` is (N, d) or (d,)."""
        single = self._check(x)
        xx = ad.reshape(x, (1, -1)) if single else x
        h, _ = self._layers(xx, False)
        return ad.reshape(h, (-1,)) if single else h

    def eval(self, x):
        """``F(x) = c x + r Ft(x)``."""
        c, r, _, _ = self.localization()
        return c * x + r * self.base(x)

    __call__ = eval

    def eval_and_jacobian(self, x):
        """``F(x)`` (N, d) and ``D_x F(x)`` (N, d, d)."""
        single = self._check(x)
        xx = ad.reshape(x, (1, -1)) if single else x
        h, t = self._layers(xx, True)
        n = ad.value(xx).shape[0]
        if ad.value(t).shape[0] != n:
            t = t + np.zeros((n, 1, 1))
        c, r, _, _ = self.localization()
        eye = np.eye(self.dim)
        fx = c * xx + r * h
        jac = c * eye + r * t
        if single:
            return ad.reshape(fx, (-1,)), ad.reshape(jac, (self.dim, self.dim))
        return fx, jac

    def jacobian(self, x):
        return self.eval_and_jacobian(x)[1]

    def base_jacobian(self, x):
        single = self._check(x)
        xx = ad.reshape(x, (1, -1)) if single else x
        _, t = self._layers(xx, True)
        n = ad.value(xx).shape[0]
        if ad.value(t).shape[0] != n:
            t = t + np.zeros((n, 1, 1))
        return ad.reshape(t, (self.dim, self.dim)) if single else t


@dataclass
class LocalizedField:
    """``F(x) = c x + r Ft(x)`` with learnable localization."""

    base: MlpField
    loc: LocalizationParams = dc_field(default_factory=LocalizationParams)
    scheme: ThetaScheme = dc_field(default_factory=ThetaScheme)

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def theta(self) -> float:
        return self.scheme.theta

    def param_names(self) -> list[str]:
        n = len(self.base.weights)
        return [f"W{i}" for i in range(n)] + [f"b{i}" for i in range(n)] + ["gamma_c", "gamma_L"]

    def params(self) -> dict[str, np.ndarray]:
        out = {f"W{i}": w for i, w in enumerate(self.base.weights)}
        out.update({f"b{i}": b for i, b in enumerate(self.base.biases)})
        out["gamma_c"] = np.array(float(self.loc.gamma_c))
        out["gamma_L"] = np.array(float(self.loc.gamma_L))
        return out

    def set_params(self, values: dict):
        for i in range(len(self.base.weights)):
            self.base.weights[i] = np.array(values[f"W{i}"], dtype=float)
            self.base.biases[i] = np.array(values[f"b{i}"], dtype=float)
        self.loc.gamma_c = float(values["gamma_c"])
        self.loc.gamma_L = float(values["gamma_L"])

    def bind(self, values: dict | None = None) -> BoundField:
        return BoundField(self.base, self.loc, self.theta, self.params() if values is None else values)

    def on_tape(self, tape: nm.Tape) -> tuple[BoundField, dict]:
        """Register every parameter as a tape leaf; returns the binding and leaves."""
        leaves = {k: tape.var(v) for k, v in self.params().items()}
        return self.bind(leaves), leaves

    def __call__(self, x):
        return self.bind().eval(np.asarray(x, dtype=float))

    def jacobian(self, x):
        return self.bind().jacobian(np.asarray(x, dtype=float))

    def localization(self) -> Localization:
        return self.bind().localization()

    def disk(self) -> StabilityDisk:
        c, r, c_hat, L = self.localization()
        return StabilityDisk(float(c), float(r), float(c_hat), float(L))

    def copy(self) -> "LocalizedField":
        return LocalizedField(self.base.copy(), LocalizationParams(**vars(self.loc)), self.scheme)


def lipschitz_bound(f: LocalizedField) -> float:
    """``sup |R_theta|`` over the eigenvalue disk, i.e. ``max(c_hat, L)``.

    Falls back (with a warning) to boundary sampling if ``c <= R^-1(0)``,
    which for this monotone parameterization means ``c_hat <= 0``.
    """
    disk = f.disk()
    if disk.c_hat > 0:
        return max(disk.c_hat, disk.L) if disk.radius > 0 else disk.c_hat
    warnings.warn("localization outside the certified range; sampling the disk boundary", stacklevel=2)
    return disk_sup(f.theta, disk)[0]


def make_field(dim=2, widths=(32, 32), activation="tanh", mode="ranged", c_hat_range=(0.5, 1.0),
               L_range=(1.0, 5.0), scheme: ThetaScheme | None = None, rng=None, **kw) -> LocalizedField:
    rng = np.random.default_rng(rng)
    mlp = MlpField.init(dim, widths, activation, rng, **kw)
    loc = LocalizationParams(mode, 0.0, 0.0, tuple(c_hat_range), tuple(L_range))
    return LocalizedField(mlp, loc, scheme or ThetaScheme())
