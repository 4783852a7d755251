"""Parameters, module containers, and learned layers built on the tape."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .tensor import Tensor


class Parameter:
    """A trainable tensor plus its Adam accumulators.

    ``grad`` mirrors the wrapped tensor's gradient; the optimizer zeroes it
    after every step. Moment arrays are lazily allocated to match the value.
    """

    def __init__(self, array):
        self.value = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self.m = None
        self.v = None
        self.steps = 0

    @property
    def data(self):
        return self.value.data

    @data.setter
    def data(self, arr):
        self.value.data = np.asarray(arr, dtype=np.float64)

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self):
        self.value.grad = None

    @property
    def shape(self):
        return self.value.data.shape


class Module:
    """Minimal container tracking named parameters and submodules."""

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._modules = {}
        self.training = True

    def train(self, mode=True):
        self.training = mode
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def register(self, name, array):
        p = Parameter(array)
        self._params[name] = p
        return p

    def register_buffer(self, name, array):
        arr = np.array(array, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def add_module(self, name, module):
        self._modules[name] = module
        return module

    def parameters(self):
        """Ordered dict of dotted-name -> Parameter."""
        out = {}
        for name, p in self._params.items():
            out[name] = p
        for mname, m in self._modules.items():
            for name, p in m.parameters().items():
                out[f"{mname}.{name}"] = p
        return out

    def buffers(self):
        out = {}
        for name, b in self._buffers.items():
            out[name] = b
        for mname, m in self._modules.items():
            for name, b in m.buffers().items():
                out[f"{mname}.{name}"] = b
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state_arrays(self):
        """All persistent arrays (parameters then buffers) by dotted name."""
        out = {name: p.data for name, p in self.parameters().items()}
        for name, b in self.buffers().items():
            out["buf." + name] = b
        return out

    def load_state_arrays(self, arrays):
        params = self.parameters()
        bufs = self.buffers()
        for name, p in params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: stored shape {arr.shape} != {p.data.shape}")
            p.data = arr
        for name in bufs:
            key = "buf." + name
            if key in arrays:
                self._set_buffer(name, arrays[key])

    def _set_buffer(self, dotted, arr):
        parts = dotted.split(".")
        mod = self
        for part in parts[:-1]:
            mod = mod._modules[part]
        mod._buffers[parts[-1]][...] = arr


class Linear(Module):
    """Affine map along the last axis: y = x @ W + b."""

    def __init__(self, n_in, n_out, rng, scale=None, zero_init=False):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            std = scale if scale is not None else np.sqrt(2.0 / n_in)
            w = rng.normal(0.0, std, size=(n_in, n_out))
        self.w = self.register("w", w)
        self.b = self.register("b", np.zeros(n_out))

    def __call__(self, x):
        if x.data.shape[-1] != self.n_in:
            raise ShapeError(f"linear expects last dim {self.n_in}, got {x.data.shape}")
        return T.matmul(x, self.w.value) + self.b.value


def linear(x, w, b):
    """Functional affine map; w and b may be Parameters or Tensors."""
    wt = w.value if isinstance(w, Parameter) else w
    bt = b.value if isinstance(b, Parameter) else b
    if x.data.shape[-1] != wt.data.shape[0]:
        raise ShapeError(f"linear shape mismatch: {x.data.shape} vs {wt.data.shape}")
    return T.matmul(x, wt) + bt


class CondScaleShift(Module):
    """Conditional normalization: per-channel scale/shift driven by a condition.

    Normalizes x over all non-channel axes of the current batch, then applies
    gamma(cond) * x_norm + beta(cond) where gamma and beta are affine heads on
    the condition vector. Heads start at gamma=1, beta=0 (zero weights).

    With ``track_running`` enabled the layer keeps exponential running
    statistics during recorded (training) passes and uses them inside
    no_grad evaluation; the default keeps current-batch statistics in both
    modes so tiny batches behave identically in train and eval.
    """

    EPS = 1e-5

    def __init__(self, cond_dim, channels, rng, track_running=False, momentum=0.9):
        super().__init__()
        self.channels = channels
        self.gamma_head = self.add_module("gamma", Linear(cond_dim, channels, rng, zero_init=True))
        self.beta_head = self.add_module("beta", Linear(cond_dim, channels, rng, zero_init=True))
        self.gamma_head.b.data = np.ones(channels)
        self.track_running = track_running
        self.momentum = momentum
        if track_running:
            self.register_buffer("run_mean", np.zeros(channels))
            self.register_buffer("run_var", np.ones(channels))

    def __call__(self, x, cond):
        if x.data.ndim < 2 or x.data.shape[-1] != self.channels:
            raise ShapeError(f"expected [..., {self.channels}] activations, got {x.data.shape}")
        if x.data.size == 0:
            raise ShapeError("conditional normalization on an empty batch")
        # Batch statistics while training; frozen running statistics in eval
        # mode (or whenever gradients are off), so single-sample decoding is
        # consistent with training-time normalization and evaluation never
        # mutates model state.
        use_running = self.track_running and (not self.training or not T.is_grad_enabled())
        if use_running:
            mu = Tensor(self._buffers["run_mean"])
            var = Tensor(self._buffers["run_var"])
            xn = (x - mu) / T.sqrt(var + self.EPS)
        else:
            xn = T.channel_norm(x, eps=self.EPS)
            if self.track_running and self.training:
                axes = tuple(range(x.data.ndim - 1))
                mu_val = x.data.mean(axis=axes)
                var_val = x.data.var(axis=axes)
                m = self.momentum
                self._buffers["run_mean"][...] = m * self._buffers["run_mean"] + (1 - m) * mu_val
                self._buffers["run_var"][...] = m * self._buffers["run_var"] + (1 - m) * var_val
        g = self.gamma_head(cond)
        b = self.beta_head(cond)
        return g * xn + b


def cond_scale_shift(x, cond, layer):
    return layer(x, cond)
