"""Adaptive Dormand-Prince 5(4) integration with dense output.

The solver core operates on flat numpy arrays; the right-hand side is any
callable ``f(t, y) -> dy/dt``. Conditioning information is closed over by
the caller. Integration may run in either time direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import IntegrationError, InvalidInputError, NumericalError

# Dormand-Prince 5(4) tableau (Dormand & Prince 1980).
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: weights of the embedded error estimate.
DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@dataclass
class SolverConfig:
    rtol: float = 1e-3
    atol: float = 1e-5
    initial_step: float | None = None
    max_steps: int = 2000
    method: str = "dopri5"

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidInputError("rtol and atol must be positive")
        if self.method not in ("dopri5", "rk4_fixed"):
            raise InvalidInputError(f"unknown method {self.method!r}")


def _error_norm(err, y0, y1, cfg):
    scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _check_finite(arr, t):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite derivative at t={t}")


def _dp_step(f, t, y, h, k1):
    """One Dormand-Prince step. Returns (y5, err, k_stages)."""
    k = [k1]
    for i in range(1, 7):
        yi = y + h * (DP_A[i] @ np.stack(k[: len(DP_A[i])]) if len(DP_A[i]) else 0.0)
        ki = f(t + DP_C[i] * h, yi)
        _check_finite(ki, t + DP_C[i] * h)
        k.append(ki)
    ks = np.stack(k)
    y5 = y + h * (DP_B5 @ ks)
    err = h * (DP_E @ ks)
    return y5, err, ks


def _initial_step(f, t0, y0, f0, direction, span, cfg):
    """Hairer-style starting step selection (two trial evaluations)."""
    scale = cfg.atol + cfg.rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


class _StepIterator:
    """Generates accepted dopri5 steps (t, y, h, k_stages) from t0 toward t1."""

    def __init__(self, f, y0, t0, t1, cfg):
        self.f = f
        self.cfg = cfg
        self.t = float(t0)
        self.t1 = float(t1)
        self.y = np.asarray(y0, dtype=np.float64)
        self.direction = 1.0 if t1 >= t0 else -1.0
        self.k1 = f(self.t, self.y)
        _check_finite(self.k1, self.t)
        span = abs(t1 - t0)
        if cfg.initial_step is not None:
            self.h = min(abs(cfg.initial_step), span) if span > 0 else abs(cfg.initial_step)
        else:
            self.h = _initial_step(f, self.t, self.y, self.k1, self.direction, max(span, 1e-12), cfg)
        self.steps_taken = 0

    def done(self):
        return self.direction * (self.t1 - self.t) <= 0.0

    def step(self):
        """Advance one accepted step; returns (t_prev, y_prev, h_signed, ks, y_new)."""
        cfg = self.cfg
        while True:
            if self.steps_taken >= cfg.max_steps:
                raise IntegrationError(
                    f"max steps ({cfg.max_steps}) exceeded at t={self.t}", last_t=self.t
                )
            self.steps_taken += 1
            h = min(self.h, abs(self.t1 - self.t))
            hs = h * self.direction
            y_new, err, ks = _dp_step(self.f, self.t, self.y, hs, self.k1)
            norm = _error_norm(err, self.y, y_new, cfg)
            if norm <= 1.0:
                factor = MAX_FACTOR if norm == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * norm ** -0.2))
                self.h = h * factor
                t_prev, y_prev = self.t, self.y
                self.t = self.t + hs
                self.y = y_new
                self.k1 = ks[6]  # FSAL
                return t_prev, y_prev, hs, ks, y_new
            self.h = h * max(MIN_FACTOR, SAFETY * norm ** -0.2)


def _rk4_fixed(f, y0, t0, t1, cfg):
    h = cfg.initial_step if cfg.initial_step is not None else abs(t1 - t0) / 64.0
    if h <= 0:
        h = abs(t1 - t0) / 64.0
    n = max(1, int(round(abs(t1 - t0) / h))) if t1 != t0 else 0
    y = np.asarray(y0, dtype=np.float64)
    t = float(t0)
    hs = (t1 - t0) / n if n else 0.0
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + hs / 2, y + hs / 2 * k1)
        k3 = f(t + hs / 2, y + hs / 2 * k2)
        k4 = f(t + hs, y + hs * k3)
        _check_finite(k4, t + hs)
        y = y + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += hs
    return y


def integrate(f, y0, t0, t1, cfg=None):
    """Integrate dy/dt = f(t, y) from t0 to t1; returns y(t1)."""
    cfg = cfg or SolverConfig()
    y0 = np.asarray(y0, dtype=np.float64)
    if t1 == t0:
        return y0.copy()
    if cfg.method == "rk4_fixed":
        return _rk4_fixed(f, y0, t0, t1, cfg)
    it = _StepIterator(f, y0, t0, t1, cfg)
    while not it.done():
        it.step()
    return it.y


def _hermite_quartic(t0, y0, f0, h, y1, f1, ym):
    """Coefficients of the degree-4 interpolant on theta in [0,1].

    Matches value and derivative at both step endpoints plus the value at
    the step midpoint, giving a fifth-order accurate dense output.
    """
    a = y0
    b = h * f0
    A = y1 - y0 - b
    B = h * f1 - b
    C = 16.0 * (ym - y0 - 0.5 * b)
    c = -5.0 * A + B + C
    d = 14.0 * A - 3.0 * B - 2.0 * C
    e = -8.0 * A + 2.0 * B + C
    return a, b, c, d, e


def _eval_quartic(coeffs, theta):
    a, b, c, d, e = coeffs
    return a + theta * (b + theta * (c + theta * (d + theta * e)))


def integrate_dense(f, y0, times, cfg=None, t_init=0.0):
    """Integrate once from t_init and sample the solution at each time.

    ``times`` must be sorted ascending with times[0] >= t_init. Sampling uses
    a quartic Hermite interpolant per accepted step (endpoint values and
    slopes plus a midpoint computed by an extra half step), so y(t_init) is
    returned exactly when requested.
    """
    cfg = cfg or SolverConfig()
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise InvalidInputError("times must be sorted ascending")
    if times and times[0] < t_init - 1e-12:
        raise InvalidInputError(f"times start before t_init={t_init}")
    y0 = np.asarray(y0, dtype=np.float64)
    out = []
    idx = 0
    n = len(times)
    while idx < n and times[idx] <= t_init:
        out.append(y0.copy())
        idx += 1
    if idx == n:
        return out
    if cfg.method == "rk4_fixed":
        t_prev, y_prev = t_init, y0
        for tt in times[idx:]:
            y_prev = _rk4_fixed(f, y_prev, t_prev, tt, cfg)
            t_prev = tt
            out.append(y_prev.copy())
        return out
    it = _StepIterator(f, y0, t_init, times[-1], cfg)
    while idx < n:
        t_prev, y_prev, hs, ks, y_new = it.step()
        t_end = t_prev + hs
        coeffs = None
        while idx < n and times[idx] <= t_end + 1e-14:
            tt = times[idx]
            if abs(tt - t_end) <= 1e-14:
                out.append(y_new.copy())
            else:
                if coeffs is None:
                    ym = _half_step_midpoint(it.f, t_prev, y_prev, hs, ks[0])
                    coeffs = _hermite_quartic(t_prev, y_prev, ks[0], hs, y_new, ks[6], ym)
                theta = (tt - t_prev) / hs
                out.append(_eval_quartic(coeffs, theta))
            idx += 1
    return out


def _half_step_midpoint(f, t, y, hs, k1):
    """Fifth-order midpoint value via one un-controlled half step."""
    ym, _, _ = _dp_step(f, t, y, hs * 0.5, k1)
    return ym
