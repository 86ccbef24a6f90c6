"""Training configuration and its flat key-value file format.

Files are INI documents with a single ``[train]`` section; every key is a
field of :class:`TrainConfig`. Unknown keys are rejected, missing keys take
the defaults below. Lists are comma separated, booleans are true/false.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields

from ..regularize import RegWeights
from ..stability import ThetaScheme

SECTION = "train"


@dataclass
class TrainConfig:
    # theta scheme
    theta: float = 0.0
    fp_tol: float = 1e-10
    fp_max_iter: int = 100
    newton_max_iter: int = 25
    # architecture
    widths: tuple[int, ...] = (32, 32)
    activation: str = "tanh"
    output_activation: bool = False
    bias_scale: float = 0.5
    # localization
    mode: str = "ranged"
    c_hat_1: float = 0.5
    c_hat_2: float = 1.0
    L_1: float = 1.0
    L_2: float = 5.0
    # regularizers
    w_F: float = 1.0
    w_lambda: float = 0.01
    w_n: float = 1.0
    w_adj: float = 1.0
    alpha_max: float = 0.5
    eps_scale: float = 1e-2
    adjoint_steps: int = 1
    probes: int = 16
    normalize_normal: bool = True
    # optimizer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 2000
    batch_size: int = 0  # 0: full batch up to 2000 points, else 256
    power_iters: int = 1
    seed: int = 0
    # builtin data
    dataset: str = "scurve"
    n_points: int = 500
    noise: float = 0.0
    radius: float = 3.0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.mode not in ("ranged", "dissipative"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.epochs < 0 or self.batch_size < 0:
            raise ValueError("epochs and batch_size must be >= 0")
        self.scheme  # validates theta/tolerances
        self.reg_weights

    @property
    def scheme(self) -> ThetaScheme:
        return ThetaScheme(self.theta, self.fp_tol, self.fp_max_iter, self.newton_max_iter)

    @property
    def reg_weights(self) -> RegWeights:
        return RegWeights(self.w_F, self.w_lambda, self.w_n, self.w_adj, self.alpha_max, self.eps_scale,
                          self.adjoint_steps, self.probes, self.normalize_normal)

    def effective_batch(self, n: int) -> int:
        if self.batch_size:
            return min(self.batch_size, n)
        return n if n <= 2000 else 256

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if k == "widths" else v) for k, v in d.items()})


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(int(p) for p in text.split(",") if p.strip())
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def config_to_text(cfg: TrainConfig) -> str:
    lines = [f"[{SECTION}]"]
    lines += [f"{k} = {_format(v)}" for k, v in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (L_1, w_F)
    parser.read_string(text)
    if not parser.has_section(SECTION):
        raise ValueError(f"config needs a [{SECTION}] section")
    defaults = TrainConfig().to_dict()
    values = {}
    for key, raw in parser.items(SECTION):
        if key not in defaults:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _parse(key, raw, defaults[key])
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_text(fh.read())


def save_config(cfg: TrainConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


BUILTIN_CONFIGS: dict[str, TrainConfig] = {}


# shared by every builtin: a larger step, a heavier r_f weight and a wider
# perturbation band than the defaults; these reach the attraction targets in 2000 steps
_TUNED = dict(lr=3e-3, w_F=10.0, alpha_max=1.0)


def _register(name, **kw):
    BUILTIN_CONFIGS[name] = TrainConfig(**{**_TUNED, **kw})


_register("scurve-1step", dataset="scurve", adjoint_steps=1)
_register("scurve-3step", dataset="scurve", adjoint_steps=3)
_register("circle-L1", dataset="circle", L_1=1.0, L_2=1.0)
_register("circle-L5", dataset="circle", L_1=5.0, L_2=5.0)
_register("scurve-dissipative", dataset="scurve", mode="dissipative", adjoint_steps=1)


def builtin_config(name: str) -> TrainConfig:
    try:
        return BUILTIN_CONFIGS[name]
    except KeyError:
        raise KeyError(f"unknown builtin config {name!r}; choose from {sorted(BUILTIN_CONFIGS)}") from None
