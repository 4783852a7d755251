"""Permutation-invariant point-set encoders.

Per-point features pass through five residual blocks; after each of the
first four, a max-pool over the point axis is expanded back and
concatenated onto the per-point features. The fifth block's output is
max-pooled and mapped to the latent code. Max-pooling makes the code
exactly invariant to point order and duplication.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from ..errors import InvalidInputError
from .blocks import ResnetBlockFC

N_BLOCKS = 5


class PointSetEncoder(ad.Module):
    def __init__(self, in_dim, hidden, out_dim, rng):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim
        self.fc_in = self.add_module("fc_in", ad.Linear(in_dim, 2 * hidden, rng))
        self.blocks = [
            self.add_module(f"block{i}", ResnetBlockFC(2 * hidden, hidden, rng))
            for i in range(N_BLOCKS)
        ]
        self.fc_out = self.add_module("fc_out", ad.Linear(hidden, out_dim, rng, scale=1.0 / hidden**0.5))

    def __call__(self, points):
        """points: Tensor or array [B, N, in_dim] or [N, in_dim] -> [B, out] / [out]."""
        x = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64))
        single = x.data.ndim == 2
        if single:
            x = T.reshape(x, (1,) + x.data.shape)
        if x.data.ndim != 3 or x.data.shape[-1] != self.in_dim:
            raise InvalidInputError(
                f"encoder expects [B, N, {self.in_dim}] points, got {x.data.shape}"
            )
        if x.data.shape[1] == 0:
            raise InvalidInputError("cannot encode an empty point cloud")
        b, n, _ = x.data.shape
        h = self.fc_in(x)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < N_BLOCKS - 1:
                pooled = T.max_reduce(h, axis=1)
                expanded = T.broadcast_to(T.reshape(pooled, (b, 1, self.hidden)), (b, n, self.hidden))
                h = T.concat([h, expanded], axis=2)
        code = self.fc_out(T.max_reduce(h, axis=1))
        return code[0] if single else code
