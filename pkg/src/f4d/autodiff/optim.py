"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam. ``step`` applies the bias-corrected update and zeroes grads."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            if p.m is None:
                p.m = np.zeros_like(p.data)
                p.v = np.zeros_like(p.data)
            p.steps += 1
            p.m = self.beta1 * p.m + (1.0 - self.beta1) * g
            p.v = self.beta2 * p.v + (1.0 - self.beta2) * (g * g)
            mhat = p.m / (1.0 - self.beta1 ** p.steps)
            vhat = p.v / (1.0 - self.beta2 ** p.steps)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self, prefix=""):
        out = {}
        for i, p in enumerate(self.params):
            if p.m is not None:
                out[f"{prefix}{i}.m"] = p.m
                out[f"{prefix}{i}.v"] = p.v
                out[f"{prefix}{i}.t"] = np.array([float(p.steps)])
        return out

    def load_state_arrays(self, arrays, prefix=""):
        for i, p in enumerate(self.params):
            key = f"{prefix}{i}.m"
            if key in arrays:
                p.m = np.array(arrays[key])
                p.v = np.array(arrays[f"{prefix}{i}.v"])
                p.steps = int(arrays[f"{prefix}{i}.t"][0])


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One-shot Adam update over a parameter collection."""
    Adam(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps).step()
