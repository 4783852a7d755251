"""Implicit occupancy decoder conditioned on identity and pose codes.

A query point is embedded, passed through five residual blocks whose
normalization layers are driven by the concatenated condition vector, and
mapped to a logit. The sigmoid is applied explicitly at inference; losses
consume the logits directly.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from ..errors import InvalidInputError
from .blocks import CondResnetBlock

N_BLOCKS = 5


class OccupancyDecoder(ad.Module):
    def __init__(self, code_dim, hidden, rng, track_running=False):
        super().__init__()
        self.code_dim = code_dim
        self.hidden = hidden
        self.cond_dim = 2 * code_dim
        self.fc_p = self.add_module("fc_p", ad.Linear(3, hidden, rng))
        self.blocks = [
            self.add_module(f"block{i}", CondResnetBlock(hidden, self.cond_dim, rng, track_running))
            for i in range(N_BLOCKS)
        ]
        self.norm_out = self.add_module(
            "norm_out", ad.CondScaleShift(self.cond_dim, hidden, rng, track_running)
        )
        self.fc_out = self.add_module("fc_out", ad.Linear(hidden, 1, rng, scale=1.0 / hidden**0.5))

    def __call__(self, points, cond):
        """points [M, 3], cond [M, 2*code_dim] -> logits [M]."""
        pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64))
        if pts.data.ndim != 2 or pts.data.shape[1] != 3:
            raise InvalidInputError(f"decoder expects [M, 3] points, got {pts.data.shape}")
        if cond.data.shape != (pts.data.shape[0], self.cond_dim):
            raise InvalidInputError(
                f"decoder expects [M, {self.cond_dim}] conditions, got {cond.data.shape}"
            )
        if not np.all(np.isfinite(cond.data)):
            raise InvalidInputError("non-finite condition codes")
        h = self.fc_p(pts)
        for block in self.blocks:
            h = block(h, cond)
        logits = self.fc_out(T.relu(self.norm_out(h, cond)))
        return T.reshape(logits, (pts.data.shape[0],))
