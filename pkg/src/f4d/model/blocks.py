"""Residual building blocks shared by the encoders, dynamics, and decoder."""

from __future__ import annotations

from .. import autodiff as ad
from ..autodiff import tensor as T


class ResnetBlockFC(ad.Module):
    """Pre-activation residual block: out = shortcut(x) + fc1(relu(fc0(relu(x))))."""

    def __init__(self, n_in, n_hidden, rng):
        super().__init__()
        self.fc0 = self.add_module("fc0", ad.Linear(n_in, n_hidden, rng))
        self.fc1 = self.add_module("fc1", ad.Linear(n_hidden, n_hidden, rng, scale=1.0 / n_hidden**0.5))
        self.shortcut = None
        if n_in != n_hidden:
            self.shortcut = self.add_module("shortcut", ad.Linear(n_in, n_hidden, rng))

    def __call__(self, x):
        net = self.fc0(T.relu(x))
        dx = self.fc1(T.relu(net))
        xs = self.shortcut(x) if self.shortcut is not None else x
        return xs + dx


class CondResnetBlock(ad.Module):
    """Residual block whose normalizations are driven by a condition vector."""

    def __init__(self, channels, cond_dim, rng, track_running=False):
        super().__init__()
        self.norm0 = self.add_module("norm0", ad.CondScaleShift(cond_dim, channels, rng, track_running))
        self.norm1 = self.add_module("norm1", ad.CondScaleShift(cond_dim, channels, rng, track_running))
        self.fc0 = self.add_module("fc0", ad.Linear(channels, channels, rng))
        self.fc1 = self.add_module("fc1", ad.Linear(channels, channels, rng, scale=1.0 / channels**0.5))

    def __call__(self, x, cond):
        net = self.fc0(T.relu(self.norm0(x, cond)))
        dx = self.fc1(T.relu(self.norm1(net, cond)))
        return x + dx
