"""Flat dotted-key configuration with profiles and override precedence.

Precedence (lowest to highest): built-in defaults, named profile, JSON
config file, explicit --set key=value pairs. The config file is a single
JSON object whose keys are the dotted names below.
"""

from __future__ import annotations

import json

from .errors import InvalidInputError
from .model import ModelConfig
from .odeint import SolverConfig
from .tasks import OptimConfig
from .training import TrainConfig

DEFAULTS = {
    "model.code_dim": 128,
    "model.hidden": 128,
    "model.track_running_stats": False,
    "ode.rtol": 1e-3,
    "ode.atol": 1e-5,
    "ode.method": "dopri5",
    "ode.max_steps": 2000,
    "ode.initial_step": None,
    "data.L": 17,
    "data.n_points": 300,
    "data.n_query": 2048,
    "data.sigma_w": 0.08,
    "data.drift_scale": 0.0,
    "data.sigma_near": 0.05,
    "data.bounding_volume": "unit_cube",
    "data.test_motions": None,
    "data.unseen_ids": None,
    "train.lr": 1e-4,
    "train.batch_pairs": 4,
    "train.exchange_rate": 0.5,
    "train.lambda1": 1.0,
    "train.lambda2": 1.0,
    "train.steps": 20000,
    "train.eval_every": 250,
    "train.checkpoint_every": 2000,
    "train.queries_per_step": 2048,
    "train.eval_grid_res": 24,
    "optim.init_std": 0.1,
    "optim.lr": 0.03,
    "optim.iterations": 500,
    "optim.halve_every": 100,
    "eval.grid_res": 64,
    "eval.threshold": 0.4,
    "eval.n_iou_points": 10000,
    "eval.n_surface_points": 3000,
}

PROFILES = {
    "paper": {},
    "tiny": {
        "model.code_dim": 32,
        "model.hidden": 32,
        "train.lr": 1e-3,
        "train.batch_pairs": 2,
        "train.queries_per_step": 512,
        "train.steps": 3000,
        "train.eval_every": 200,
        "train.eval_grid_res": 20,
        "eval.grid_res": 48,
        "eval.n_iou_points": 4000,
        "eval.n_surface_points": 1500,
    },
}


def resolve(profile=None, config_path=None, sets=()):
    """Merged flat config dict."""
    cfg = dict(DEFAULTS)
    if profile:
        if profile not in PROFILES:
            raise InvalidInputError(f"unknown profile {profile!r}")
        cfg.update(PROFILES[profile])
    if config_path:
        with open(config_path) as f:
            file_cfg = json.load(f)
        for key, val in file_cfg.items():
            if key not in DEFAULTS:
                raise InvalidInputError(f"unknown config key {key!r}")
            cfg[key] = val
    for item in sets:
        if "=" not in item:
            raise InvalidInputError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise InvalidInputError(f"unknown config key {key!r}")
        cfg[key] = _coerce(raw.strip(), DEFAULTS[key])
    return cfg


def _coerce(raw, default):
    if raw.lower() in ("null", "none"):
        return None
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


def solver_config(cfg):
    return SolverConfig(
        rtol=cfg["ode.rtol"],
        atol=cfg["ode.atol"],
        initial_step=cfg["ode.initial_step"],
        max_steps=int(cfg["ode.max_steps"]),
        method=cfg["ode.method"],
    )


def model_config(cfg, seq_len, seed, scale=1.0, translation=(0.0, 0.0, 0.0)):
    return ModelConfig(
        code_dim=int(cfg["model.code_dim"]),
        hidden=int(cfg["model.hidden"]),
        seq_len=int(seq_len),
        seed=int(seed),
        track_running_stats=bool(cfg["model.track_running_stats"]),
        solver=solver_config(cfg),
        scale=float(scale),
        translation=tuple(translation),
    )


def train_config(cfg, seed):
    return TrainConfig(
        lr=cfg["train.lr"],
        batch_pairs=int(cfg["train.batch_pairs"]),
        exchange_rate=cfg["train.exchange_rate"],
        lambda1=cfg["train.lambda1"],
        lambda2=cfg["train.lambda2"],
        steps=int(cfg["train.steps"]),
        eval_every=int(cfg["train.eval_every"]),
        checkpoint_every=int(cfg["train.checkpoint_every"]),
        queries_per_step=int(cfg["train.queries_per_step"]),
        eval_grid_res=int(cfg["train.eval_grid_res"]),
        seed=int(seed),
    )


def optim_config(cfg):
    return OptimConfig(
        init_std=cfg["optim.init_std"],
        lr=cfg["optim.lr"],
        iterations=int(cfg["optim.iterations"]),
        halve_every=int(cfg["optim.halve_every"]),
    )
