"""Full model: three encoders, latent dynamics, occupancy decoder."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from ..errors import InvalidInputError, VersionError
from ..geometry import OccupancyGrid, marching_cubes
from ..odeint import SolverConfig, odeint
from .decoder import OccupancyDecoder
from .encoder import PointSetEncoder
from .vector_field import LatentDynamics

MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    code_dim: int = 128
    hidden: int = 128
    seq_len: int = 17
    seed: int = 0
    track_running_stats: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    scale: float = 1.0
    translation: tuple = (0.0, 0.0, 0.0)

    def to_dict(self):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "code_dim": self.code_dim,
            "hidden": self.hidden,
            "seq_len": self.seq_len,
            "seed": self.seed,
            "track_running_stats": self.track_running_stats,
            "solver": {
                "rtol": self.solver.rtol,
                "atol": self.solver.atol,
                "initial_step": self.solver.initial_step,
                "max_steps": self.solver.max_steps,
                "method": self.solver.method,
            },
            "scale": self.scale,
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise VersionError(f"model format version {version} unsupported")
        s = d["solver"]
        return cls(
            code_dim=int(d["code_dim"]),
            hidden=int(d["hidden"]),
            seq_len=int(d["seq_len"]),
            seed=int(d["seed"]),
            track_running_stats=bool(d["track_running_stats"]),
            solver=SolverConfig(
                rtol=s["rtol"], atol=s["atol"], initial_step=s["initial_step"],
                max_steps=int(s["max_steps"]), method=s["method"],
            ),
            scale=float(d["scale"]),
            translation=tuple(d["translation"]),
        )


class Model(ad.Module):
    """Encode a trajectory sequence into (identity, pose, motion) codes,
    evolve the pose code through time, and decode occupancy anywhere."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d, h = cfg.code_dim, cfg.hidden
        self.enc_identity = self.add_module("enc_identity", PointSetEncoder(3, h, d, rng))
        self.enc_pose = self.add_module("enc_pose", PointSetEncoder(3, h, d, rng))
        self.enc_motion = self.add_module(
            "enc_motion", PointSetEncoder(3 * cfg.seq_len, h, d, rng)
        )
        self.dynamics = self.add_module("dynamics", LatentDynamics(d, h, rng))
        self.decoder = self.add_module(
            "decoder", OccupancyDecoder(d, h, rng, cfg.track_running_stats)
        )

    # -- encoding --------------------------------------------------------------

    def encode_identity(self, first_frame):
        return self.enc_identity(first_frame)

    def encode_pose(self, first_frame):
        return self.enc_pose(first_frame)

    def encode_motion(self, sequence):
        """sequence: [L, N, 3] or [B, L, N, 3] with trajectory correspondence."""
        seq = np.asarray(sequence.data if isinstance(sequence, Tensor) else sequence,
                         dtype=np.float64)
        single = seq.ndim == 3
        if single:
            seq = seq[None]
        if seq.ndim != 4 or seq.shape[1] != self.cfg.seq_len:
            raise InvalidInputError(
                f"motion encoder configured for L={self.cfg.seq_len}, got shape {seq.shape}"
            )
        b, L, n, _ = seq.shape
        flat = np.transpose(seq, (0, 2, 1, 3)).reshape(b, n, 3 * L)
        out = self.enc_motion(flat)
        return out[0] if single else out

    def encode(self, sequence):
        """(identity, pose, motion) codes for [B?, L, N, 3] input."""
        seq = np.asarray(sequence, dtype=np.float64)
        first = seq[0] if seq.ndim == 3 else seq[:, 0]
        return (
            self.encode_identity(first),
            self.encode_pose(first),
            self.encode_motion(seq),
        )

    # -- latent dynamics ---------------------------------------------------------

    def transform_pose(self, c_p, c_m, times, mode="adjoint", rk4_steps=16):
        """Pose-code trajectory at the requested times: Tensor [len(times), ...].

        times must be sorted within [0, 1]; the code at time 0 equals the
        input pose code exactly.
        """
        times = [float(t) for t in times]
        if any(t < 0.0 or t > 1.0 for t in times):
            raise InvalidInputError("pose transform times must lie in [0, 1]")
        c_p = T.as_tensor(c_p)
        c_m = T.as_tensor(c_m)
        feats = self.dynamics.motion_features(c_m)
        return odeint(
            self.dynamics.ode_fn(), c_p, feats, times, self.cfg.solver,
            mode=mode, rk4_steps=rk4_steps,
        )

    # -- decoding ----------------------------------------------------------------

    def decode_logits(self, points, cond):
        """points [M, 3] with per-row condition [M, 2*code_dim] -> logits [M]."""
        return self.decoder(points, cond)

    @staticmethod
    def build_cond(c_i, c_pt):
        """Concatenate identity and pose codes along the last axis."""
        return T.concat([T.as_tensor(c_i), T.as_tensor(c_pt)], axis=-1)

    @staticmethod
    def expand_cond(cond, n_points):
        """[B, C] per-sample conditions -> [B * n_points, C] per-row."""
        b, c = cond.data.shape
        return T.reshape(
            T.broadcast_to(T.reshape(cond, (b, 1, c)), (b, n_points, c)),
            (b * n_points, c),
        )

    def decode_occupancy(self, points, c_i, c_pt):
        """Occupancy probabilities of [M, 3] points for one code pair."""
        c_i = np.asarray(c_i.data if isinstance(c_i, Tensor) else c_i, dtype=np.float64)
        c_pt = np.asarray(c_pt.data if isinstance(c_pt, Tensor) else c_pt, dtype=np.float64)
        if not (np.all(np.isfinite(c_i)) and np.all(np.isfinite(c_pt))):
            raise InvalidInputError("non-finite latent codes")
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        with T.no_grad():
            cond = Tensor(np.tile(np.concatenate([c_i, c_pt])[None], (len(pts), 1)))
            logits = self.decode_logits(Tensor(pts), cond)
            probs = T.sigmoid(logits)
        return probs.data

    def reconstruct_frame(self, c_i, c_pt, grid_res=64, threshold=0.4):
        """Extract the iso-surface of the decoded occupancy field."""
        grid = OccupancyGrid.empty(grid_res)
        pts = grid.centers().reshape(-1, 3)
        probs = self.decode_occupancy(pts, c_i, c_pt)
        grid.values = probs.reshape(grid.resolution)
        return marching_cubes(grid, level=threshold)

    # -- persistence ---------------------------------------------------------------

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "model.json"), "w") as f:
            json.dump(self.cfg.to_dict(), f, indent=1, sort_keys=True)
        ad.save_arrays(os.path.join(out_dir, "weights.f4dw"), self.state_arrays())

    @classmethod
    def load(cls, model_dir):
        meta_path = os.path.join(model_dir, "model.json")
        if not os.path.exists(meta_path):
            raise InvalidInputError(f"{model_dir}: no model.json")
        with open(meta_path) as f:
            cfg = ModelConfig.from_dict(json.load(f))
        model = cls(cfg)
        model.load_state_arrays(ad.load_arrays(os.path.join(model_dir, "weights.f4dw")))
        return model
