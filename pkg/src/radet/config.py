"""Run configuration: TOML/JSON loading, strict key validation, resolved echo."""
from __future__ import annotations

import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import manifold as mf
from .encoders import (EncoderHandle, make_anisotropic, make_linear,
                       make_quadratic, make_smooth_net, make_zero)
from .errors import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_OUTPUT_DIR = "RADET_OUTPUT_DIR"

DEFAULTS = {
    "seed": 0,
    "threads": 0,                 # 0 = leave the runtime default
    "output_dir": "",             # "" = env var or cwd
    "testbed": {
        "kind": "sine_graph",     # or "flat_line", "random"
        "ambient_dim": 2,
        "intrinsic_dim": 1,
        "amplitude": 1.0,
        "frequency": 1.0,
        "n_terms": 4,
        "freq_scale": 1.0,
        "n_anchors": 64,
        "eps0": 0.1,
        "lam": 1.0,
        "sigma_broad": 4.0,
    },
    "encoder": {
        "kind": "anisotropic",    # linear|quadratic|smooth_net|anisotropic|zero|external
        "kappa_t": 0.1,
        "kappa_n": 2.0,
        "curvature_gain": 1.0,
        "squash_radius": 2.0,     # 0 disables squashing
        "matrix": [],             # linear kind
        "quad_a": [],             # quadratic kind
        "quad_b": [],
        "widths": [2, 8, 2],      # smooth_net kind
    },
    "probe": {
        "law": "gaussian",
        "eps_grid": [0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
        "k": 400,
        "n_points": 256,
    },
    "bound": {
        "lam_grid": [0.0, 0.25, 0.5, 0.75, 1.0],
        "probe_eps": 0.0,         # 0 = auto regime detection
        "n_points": 512,
        "k_probe": 400,
        "k_kl": 20000,
        "k_delta": 20000,
        "k_b": 4000,
    },
    "data": {
        "lam_img": 0.9,
        "image_hw": 32,
        "n_train": 2000,
        "n_test": 500,
        "noise_std": 0.08,
        "fake_texture_mix": 0.6,
        "spectrum_alpha": 1.2,
    },
    "train": {
        "eps_pix": 8.0 / 255.0,
        "gamma": 0.1,
        "lr": 1e-3,
        "batch_size": 32,
        "epochs": 10,
        "emb_dim": 32,
        "branches": ["sem", "dist", "diff", "res"],
        "encoder_seed": 0,
        "encoder_gain": 1.5,
    },
    "eval": {
        "blur_sigmas": [0.8, 1.0, 1.5],
        "jpeg_qfs": [95.0, 90.0, 85.0],
        "branch_ablation": True,
    },
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"{where!r} must be a table/object")
            out[key] = _merge(defaults[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path: str | os.PathLike | None) -> dict:
    """Read TOML or JSON config, validate keys, merge over defaults."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix == ".json":
            user = json.loads(raw.decode())
        else:
            user = tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigurationError("config root must be a table/object")
    return _merge(DEFAULTS, user)


def resolve_output_dir(cfg: dict) -> Path:
    out = cfg.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR) or "."
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def echo_config(cfg: dict, out_dir: Path, name: str = "resolved_config.json"):
    """Write the fully resolved config next to the outputs."""
    (out_dir / name).write_text(json.dumps(cfg, indent=2) + "\n",
                                encoding="utf-8")


# ---- builders ------------------------------------------------------------

def build_manifold(cfg: dict) -> mf.ManifoldModel:
    tb = cfg["testbed"]
    kind = tb["kind"]
    if kind == "flat_line":
        spec = mf.ManifoldSpec.flat_line(tb["ambient_dim"])
    elif kind == "sine_graph":
        spec = mf.ManifoldSpec.sine_graph(tb["ambient_dim"], tb["amplitude"],
                                          tb["frequency"])
    elif kind == "random":
        spec = mf.ManifoldSpec(intrinsic_dim=tb["intrinsic_dim"],
                               ambient_dim=tb["ambient_dim"],
                               seed=cfg["seed"], n_terms=tb["n_terms"],
                               amplitude=tb["amplitude"],
                               freq_scale=tb["freq_scale"])
    else:
        raise ConfigurationError(f"unknown testbed kind {kind!r}")
    return mf.make_manifold(spec)


def build_encoder(cfg: dict, manifold: mf.ManifoldModel | None) -> EncoderHandle:
    enc = cfg["encoder"]
    kind = enc["kind"]
    if kind == "external":
        raise ConfigurationError(
            "'external' encoders are ingestion tags; they cannot be evaluated")
    if kind == "linear":
        return make_linear(np.asarray(enc["matrix"], dtype=float))
    if kind == "quadratic":
        return make_quadratic(np.asarray(enc["quad_a"], dtype=float),
                              np.asarray(enc["quad_b"], dtype=float))
    if kind == "smooth_net":
        return make_smooth_net(tuple(enc["widths"]), seed=cfg["seed"])
    if kind == "zero":
        dim = cfg["testbed"]["ambient_dim"]
        return make_zero(dim, dim)
    if kind == "anisotropic":
        if manifold is None:
            raise ConfigurationError("anisotropic encoder needs a testbed")
        squash = enc["squash_radius"] or None
        return make_anisotropic(manifold, enc["kappa_t"], enc["kappa_n"],
                                curvature_gain=enc["curvature_gain"],
                                squash_radius=squash)
    raise ConfigurationError(f"unknown encoder kind {kind!r}")
