"""Conditional latent dynamics: the vector field evolving the pose code.

The field input is the concatenation of the current time value and the
pose code; each of the five residual blocks additionally receives a
per-block linear feature of the motion code, added to its input. The
output layer starts at zero so the initial flow is the identity.

The motion features depend only on the motion code, so they are computed
once per solve (in the surrounding tape) and passed to the ODE as its
condition vector; gradients flow back through them to the motion code and
the projection weights.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from .blocks import ResnetBlockFC

N_BLOCKS = 5


class LatentDynamics(ad.Module):
    def __init__(self, code_dim, hidden, rng):
        super().__init__()
        self.code_dim = code_dim
        self.hidden = hidden
        self.fc_in = self.add_module("fc_in", ad.Linear(code_dim + 1, hidden, rng))
        self.blocks = [
            self.add_module(f"block{i}", ResnetBlockFC(hidden, hidden, rng))
            for i in range(N_BLOCKS)
        ]
        self.fc_out = self.add_module("fc_out", ad.Linear(hidden, code_dim, rng, zero_init=True))
        self.motion_proj = self.add_module(
            "motion_proj", ad.Linear(code_dim, N_BLOCKS * hidden, rng)
        )

    def motion_features(self, c_m):
        """[B, N_BLOCKS * hidden] per-block additive features."""
        return self.motion_proj(c_m)

    def ode_fn(self):
        return _DynamicsFn(self)


class _DynamicsFn:
    """RHS adapter for the solver: state = pose code, cond = motion features."""

    def __init__(self, net):
        self.net = net

    def parameters(self):
        out = {}
        for prefix in ["fc_in"] + [f"block{i}" for i in range(N_BLOCKS)] + ["fc_out"]:
            for name, p in self.net._modules[prefix].parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def __call__(self, t, y, feats):
        single = y.data.ndim == 1
        if single:
            y = T.reshape(y, (1,) + y.data.shape)
            feats = T.reshape(feats, (1,) + feats.data.shape)
        b = y.data.shape[0]
        tcol = Tensor(np.full((b, 1), float(t)))
        h = self.net.fc_in(T.concat([tcol, y], axis=1))
        hidden = self.net.hidden
        for i, block in enumerate(self.net.blocks):
            h = block(h + feats[:, i * hidden : (i + 1) * hidden])
        out = self.net.fc_out(h)
        return out[0] if single else out
