"""Loss assembly and the optimization loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..field import LocalizedField, lipschitz_bound, make_field
from ..numerics import autodiff as ad
from ..regularize import draw_perturbation, r_adj, r_f, r_lambda, r_n
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import PointCloud, make_circle, make_scurve

log = logging.getLogger(__name__)

TERMS = ("r_f", "r_lambda", "r_n", "r_adj")
HISTORY_KEYS = ("epoch",) + TERMS + ("total", "lipschitz_bound")


class TrainingDiverged(FloatingPointError):
    pass


class LossTermError(RuntimeError):
    """A regularizer failed; ``term`` names which one."""

    def __init__(self, term, cause):
        super().__init__(f"{term}: {cause}")
        self.term = term


def total_loss(f, x, cfg: TrainConfig, rng):
    """Weighted regularizer sum and the unweighted per-term values.

    ``f`` is a field binding (tape leaves make the total differentiable).
    Terms with zero weight are evaluated detached for reporting only.
    """
    w = cfg.reg_weights
    weights = {"r_f": w.w_F, "r_lambda": w.w_lambda, "r_n": w.w_n, "r_adj": w.w_adj}
    pert = draw_perturbation(f, x, w, rng)
    calls = {
        "r_f": lambda: r_f(f, x),
        "r_lambda": lambda: r_lambda(f, x, cfg.scheme),
        "r_n": lambda: r_n(f, x, w, perturbation=pert),
        "r_adj": lambda: r_adj(f, x, w, cfg.scheme, perturbation=pert),
    }
    total = 0.0
    parts = {}
    for name in TERMS:
        try:
            val = calls[name]()
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            raise LossTermError(name, exc) from exc
        parts[name] = float(ad.value(val))
        if weights[name]:
            total = total + weights[name] * val
    return total, parts


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k, np.zeros_like(p))
            v = self.v.get(k, np.zeros_like(p))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def builtin_data(cfg: TrainConfig) -> PointCloud:
    if cfg.dataset == "scurve":
        return make_scurve(cfg.n_points, cfg.noise, seed=cfg.seed)
    if cfg.dataset == "circle":
        return make_circle(cfg.n_points, cfg.radius, cfg.noise, seed=cfg.seed)
    raise ValueError(f"no builtin dataset {cfg.dataset!r}")


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict):
        self.rows.append(row)

    def column(self, key) -> list[float]:
        return [r[key] for r in self.rows]

    def as_dict(self) -> dict[str, list[float]]:
        return {k: [float(r[k]) for r in self.rows] for k in HISTORY_KEYS}


def train(cfg: TrainConfig, data: PointCloud | None = None, *, field_init: LocalizedField | None = None,
          callback=None) -> tuple[Checkpoint, History]:
    """Adam over weights, biases, gamma_c and gamma_L; deterministic given ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    if data is None:
        data = builtin_data(cfg)
    f = field_init.copy() if field_init is not None else make_field(
        dim=data.dim, widths=cfg.widths, activation=cfg.activation, mode=cfg.mode,
        c_hat_range=(cfg.c_hat_1, cfg.c_hat_2), L_range=(cfg.L_1, cfg.L_2),
        scheme=cfg.scheme, rng=rng, bias_scale=cfg.bias_scale, output_activation=cfg.output_activation,
    )
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = History()
    pts = data.points
    batch = cfg.effective_batch(len(pts))
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        f.base.refresh_norms(iters=cfg.power_iters)
        x = pts if batch == len(pts) else pts[rng.choice(len(pts), batch, replace=False)]
        tape = ad.Tape()
        bf, leaves = f.on_tape(tape)
        total, parts = total_loss(bf, x, cfg, rng)
        total_v = float(ad.value(total))
        if not np.isfinite(total_v):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {parts}")
        lip = lipschitz_bound(f)
        if cfg.mode == "dissipative" and not lip < 1.0:
            raise AssertionError(f"dissipative mode produced Lipschitz bound {lip} at epoch {epoch}")
        history.append({"epoch": epoch, **parts, "total": total_v, "lipschitz_bound": lip})
        if isinstance(total, ad.Var):
            g = ad.backward(total)
            grads = {k: g[v] for k, v in leaves.items()}
            f.set_params(opt.step(f.params(), grads))
        if callback is not None:
            callback(epoch, history.rows[-1], f)
        if epoch % 100 == 0:
            log.info("epoch %d total %.4e r_f %.3e lip %.3f (%.1fs)", epoch, total_v, parts["r_f"], lip,
                     time.perf_counter() - t0)
    if cfg.epochs:
        f.base.refresh_norms(tol=1e-9)
    return Checkpoint(f, cfg, history.as_dict()), history
