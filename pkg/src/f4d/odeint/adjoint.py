"""Gradients through the ODE solution.

Two routes are provided:

* :func:`odeint` with ``mode="adjoint"`` (default) - the solution enters the
  autodiff tape as a single stacked tensor whose backward pass solves the
  augmented adjoint system (state, state-adjoint, condition-adjoint,
  parameter-adjoint) backward in time with the same solver, restarting from
  a checkpointed state at every requested output time.
* :func:`odeint` with ``mode="rk4_graph"`` - classic fixed-step RK4 unrolled
  directly through the tape. Used as the discretize-then-differentiate
  oracle for the adjoint route.

The right-hand side is any callable ``func(t, y, cond) -> dy/dt`` over
tensors, differentiable w.r.t. ``y``, ``cond``, and its own parameters
(exposed via ``func.parameters()``).
"""

from __future__ import annotations

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from ..errors import InvalidInputError
from .solver import SolverConfig, integrate, integrate_dense


def _func_params(func):
    if hasattr(func, "parameters"):
        return list(func.parameters().values())
    return []


def _numpy_rhs(func, cond_data, shape):
    cond_t = Tensor(cond_data)

    def f_np(t, y_flat):
        with T.no_grad():
            out = func(t, Tensor(y_flat.reshape(shape)), cond_t)
        return out.data.reshape(-1)

    return f_np


def _force_grad():
    return _ForcedGrad()


class _ForcedGrad:
    def __enter__(self):
        self._prev = T._grad_enabled
        T._grad_enabled = True

    def __exit__(self, *exc):
        T._grad_enabled = self._prev


def _adjoint_segments(func, cond_data, shape, times, checkpoints, out_grads, cfg, t_init):
    """Solve the augmented adjoint system across checkpointed segments."""
    params = _func_params(func)
    param_tensors = [p.value for p in params]
    sizes = [p.data.size for p in params]
    n_y = int(np.prod(shape))
    n_c = cond_data.size
    n_p = int(sum(sizes))

    def aug_rhs(t, s):
        y = s[:n_y].reshape(shape)
        a_y = s[n_y : 2 * n_y].reshape(shape)
        with _force_grad():
            y_t = Tensor(y, requires_grad=True)
            c_t = Tensor(cond_data, requires_grad=True)
            out = func(t, y_t, c_t)
            grads = T.vjp(out, a_y, [y_t, c_t] + param_tensors)
        g_y, g_c = grads[0], grads[1]
        g_p = (
            np.concatenate([g.reshape(-1) for g in grads[2:]])
            if n_p
            else np.zeros(0)
        )
        return np.concatenate(
            [out.data.reshape(-1), -g_y.reshape(-1), -g_c.reshape(-1), -g_p]
        )

    a_y = np.array(out_grads[-1], dtype=np.float64)
    a_c = np.zeros(n_c)
    a_p = np.zeros(n_p)
    boundaries = list(times) + [t_init]
    states = list(checkpoints) + [None]
    for i in range(len(times) - 1, -1, -1):
        t_hi = boundaries[i]
        t_lo = boundaries[i - 1] if i > 0 else t_init
        if abs(t_hi - t_lo) > 1e-14:
            s0 = np.concatenate(
                [states[i].reshape(-1), a_y.reshape(-1), a_c, a_p]
            )
            s1 = integrate(aug_rhs, s0, t_hi, t_lo, cfg)
            a_y = s1[n_y : 2 * n_y].reshape(shape)
            a_c = s1[2 * n_y : 2 * n_y + n_c]
            a_p = s1[2 * n_y + n_c :]
        if i > 0:
            a_y = a_y + out_grads[i - 1]
    grads_p = []
    off = 0
    for p, sz in zip(params, sizes):
        grads_p.append(a_p[off : off + sz].reshape(p.data.shape))
        off += sz
    return a_y, a_c.reshape(cond_data.shape), grads_p


def odeint(func, y0, cond, times, cfg=None, mode="adjoint", rk4_steps=16, t_init=0.0):
    """Solve dy/dt = func(t, y, cond) from t_init, sampled at ``times``.

    Returns a tensor of shape [len(times), *y0.shape] participating in the
    tape; gradients flow to ``y0``, ``cond``, and the function's parameters.
    """
    cfg = cfg or SolverConfig()
    times = [float(t) for t in times]
    if not times:
        raise InvalidInputError("odeint requires at least one output time")
    if any(b < a for a, b in zip(times, times[1:])):
        raise InvalidInputError("times must be sorted ascending")
    y0 = T.as_tensor(y0)
    cond = T.as_tensor(cond)
    if mode == "rk4_graph":
        return _odeint_rk4_graph(func, y0, cond, times, rk4_steps, t_init)
    if mode != "adjoint":
        raise InvalidInputError(f"unknown odeint mode {mode!r}")

    shape = y0.data.shape
    f_np = _numpy_rhs(func, cond.data, shape)
    flat0 = y0.data.reshape(-1)
    ys = integrate_dense(f_np, flat0, times, cfg, t_init=t_init)
    checkpoints = [y.reshape(shape) for y in ys]
    data = np.stack(checkpoints)

    params = _func_params(func)
    parents = (y0, cond) + tuple(p.value for p in params)

    def bw(g):
        d_y0, d_cond, d_params = _adjoint_segments(
            func, cond.data, shape, times, checkpoints, list(g), cfg, t_init
        )
        return (d_y0, d_cond, *d_params)

    return Tensor._from_op(data, parents, bw)


def _odeint_rk4_graph(func, y0, cond, times, steps_per_segment, t_init):
    """Fixed-step RK4 unrolled through the tape (gradient oracle)."""
    outs = []
    y = y0
    t_prev = t_init
    shape = y0.data.shape
    for tt in times:
        if abs(tt - t_prev) > 1e-14:
            h = (tt - t_prev) / steps_per_segment
            for s in range(steps_per_segment):
                t = t_prev + s * h
                k1 = func(t, y, cond)
                k2 = func(t + h / 2, y + k1 * (h / 2), cond)
                k3 = func(t + h / 2, y + k2 * (h / 2), cond)
                k4 = func(t + h, y + k3 * h, cond)
                y = y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
            t_prev = tt
        outs.append(T.reshape(y, (1,) + shape))
    return T.concat(outs, axis=0)


def integrate_adjoint_backward(func, y0, cond, t0, t1, cfg, dl_dy1):
    """Gradients of a scalar loss through y(t1) w.r.t. y0, cond, parameters.

    Runs a fresh forward solve from t0 to t1 to obtain the checkpoint, then
    solves the augmented system backward. Returns
    (dL/dy0, dL/dcond, {param_name: dL/dparam}).
    """
    cfg = cfg or SolverConfig()
    y0 = T.as_tensor(y0)
    cond = T.as_tensor(cond)
    shape = y0.data.shape
    dl_dy1 = np.asarray(dl_dy1, dtype=np.float64)
    if dl_dy1.shape != shape:
        raise InvalidInputError(f"dL/dy1 shape {dl_dy1.shape} != state shape {shape}")
    f_np = _numpy_rhs(func, cond.data, shape)
    y1 = integrate(f_np, y0.data.reshape(-1), t0, t1, cfg).reshape(shape)
    d_y0, d_cond, d_params = _adjoint_segments(
        func, cond.data, shape, [t1], [y1], [dl_dy1], cfg, t0
    )
    names = list(func.parameters().keys()) if hasattr(func, "parameters") else []
    return d_y0, d_cond, dict(zip(names, d_params))
