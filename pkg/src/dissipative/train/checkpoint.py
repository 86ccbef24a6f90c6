"""Versioned JSON checkpoints.

Arrays are stored as ``{"shape": [...], "f64": <base64 of little-endian
float64 bytes in row-major order>}`` so a round trip is bit exact. Keys are
sorted and the layout is fixed, so save -> load -> save is byte identical.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from ..field import LocalizationParams, LocalizedField, MlpField
from .config import TrainConfig

FORMAT = "dissipative-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    field: LocalizedField
    config: TrainConfig
    history: dict[str, list[float]] = field(default_factory=dict)
    version: int = VERSION


def encode_array(a) -> dict:
    a = np.array(a, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    return {"shape": list(a.shape), "f64": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["f64"], validate=True)
    shape = tuple(d["shape"])
    if len(raw) != 8 * int(np.prod(shape, dtype=int)):
        raise CheckpointError("array payload length does not match its shape")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)


def _encode_float(x: float) -> dict:
    return encode_array(np.array(float(x)))


def field_to_dict(f: LocalizedField) -> dict:
    m = f.base
    return {
        "activation": m.activation,
        "output_activation": m.output_activation,
        "weights": [encode_array(w) for w in m.weights],
        "biases": [encode_array(b) for b in m.biases],
        "power_u": [encode_array(u) for u in m.u],
        "power_v": [encode_array(v) for v in m.v],
        "mode": f.loc.mode,
        "gamma_c": _encode_float(f.loc.gamma_c),
        "gamma_L": _encode_float(f.loc.gamma_L),
        "c_hat_range": [float(c) for c in f.loc.c_hat_range],
        "L_range": [float(c) for c in f.loc.L_range],
    }


def field_from_dict(d: dict, scheme) -> LocalizedField:
    mlp = MlpField(
        [decode_array(w) for w in d["weights"]],
        [decode_array(b) for b in d["biases"]],
        d["activation"],
        bool(d["output_activation"]),
        [decode_array(u) for u in d["power_u"]],
        [decode_array(v) for v in d["power_v"]],
    )
    loc = LocalizationParams(
        d["mode"], decode_array(d["gamma_c"]).item(), decode_array(d["gamma_L"]).item(),
        tuple(d["c_hat_range"]), tuple(d["L_range"]),
    )
    return LocalizedField(mlp, loc, scheme)


def checkpoint_to_text(ckpt: Checkpoint) -> str:
    cfg = ckpt.config.to_dict()
    cfg["widths"] = list(cfg["widths"])
    doc = {
        "format": FORMAT,
        "version": ckpt.version,
        "config": cfg,
        "field": field_to_dict(ckpt.field),
        "history": {k: [float(v) for v in vals] for k, vals in ckpt.history.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def checkpoint_from_text(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not a dissipative checkpoint")
    version = doc.get("version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version!r} (this build reads {VERSION})")
    try:
        cfg = TrainConfig.from_dict(doc["config"])
        f = field_from_dict(doc["field"], cfg.scheme)
        history = {k: list(map(float, v)) for k, v in doc["history"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc!r}") from exc
    return Checkpoint(f, cfg, history, version)


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_to_text(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return checkpoint_from_text(fh.read())
