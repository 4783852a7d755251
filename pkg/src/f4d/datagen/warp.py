"""Continuous space-time displacement fields from Gaussian control grids.

Displacement vectors are drawn i.i.d. on a 3x3x3 spatial by 5 temporal
control grid and interpolated with a Gaussian RBF over normalized
space-time distance. The kernel system is solved exactly, so the field
reproduces the control vectors at the control sites. The t=0 slice is
subtracted so every motion starts at the rest shape.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..geometry import TriMesh

N_SPATIAL = 3
N_TEMPORAL = 5
SPATIAL_EXTENT = 0.6  # control grid spans [-0.6, 0.6]^3 around the shapes
KERNEL_SIGMA = 0.5    # bandwidth: half the control-grid spacing, normalized units


def _control_sites():
    """[135, 4] sites as (x, y, z, t)."""
    axis = np.linspace(-SPATIAL_EXTENT, SPATIAL_EXTENT, N_SPATIAL)
    ts = np.linspace(0.0, 1.0, N_TEMPORAL)
    gx, gy, gz, gt = np.meshgrid(axis, axis, axis, ts, indexing="ij")
    return np.stack([gx, gy, gz, gt], axis=-1).reshape(-1, 4)


_SITES = _control_sites()
_SPACING = np.array([
    2 * SPATIAL_EXTENT / (N_SPATIAL - 1),
    2 * SPATIAL_EXTENT / (N_SPATIAL - 1),
    2 * SPATIAL_EXTENT / (N_SPATIAL - 1),
    1.0 / (N_TEMPORAL - 1),
])


def _kernel(a, b):
    """Gaussian RBF over per-axis normalized space-time distance."""
    diff = (a[:, None, :] - b[None, :, :]) / _SPACING
    r2 = np.sum(diff * diff, axis=-1)
    return np.exp(-r2 / (2.0 * KERNEL_SIGMA**2))


class WarpField:
    """Interpolated displacement field d(p, t) with d(p, 0) = 0."""

    def __init__(self, control):
        control = np.asarray(control, dtype=np.float64).reshape(-1, 3)
        if control.shape[0] != len(_SITES):
            raise InvalidInputError(
                f"expected {len(_SITES)} control vectors, got {control.shape[0]}"
            )
        if not np.all(np.isfinite(control)):
            raise InvalidInputError("control vectors must be finite")
        self.control = control
        phi = _kernel(_SITES, _SITES)
        self.weights = np.linalg.solve(phi, control)

    def _raw(self, points, t):
        pts4 = np.concatenate(
            [np.asarray(points, dtype=np.float64).reshape(-1, 3),
             np.full((len(points), 1), float(t))],
            axis=1,
        )
        return _kernel(pts4, _SITES) @ self.weights

    def displacement(self, points, t):
        """[N, 3] displacement at time t, zero at t=0 by construction."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return self._raw(points, t) - self._raw(points, 0.0)

    def displace(self, points, t):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points + self.displacement(points, t)

    def warp_mesh(self, mesh, t):
        """Displace mesh vertices at time t; connectivity unchanged."""
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise InvalidInputError(f"warp time {t} outside [0, 1]")
        return TriMesh(self.displace(mesh.vertices, t), mesh.faces)

    def magnitude_bound(self):
        """Upper bound on |d| anywhere: kernel <= 1 and the t=0 subtraction."""
        return 2.0 * float(np.linalg.norm(self.weights, axis=1).sum())

    def to_dict(self):
        return {"control": self.control.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["control"], dtype=np.float64).reshape(-1, 3))


def make_warp(seed, sigma_w, drift_scale=0.0):
    """Random warp: i.i.d. Gaussian control vectors, optional linear drift.

    ``drift_scale`` adds a shared constant-velocity displacement reaching
    that magnitude at t=1; useful for extrapolation-friendly motions.
    """
    if sigma_w < 0:
        raise InvalidInputError("sigma_w must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    control = rng.normal(0.0, sigma_w, size=(len(_SITES), 3)) if sigma_w > 0 else np.zeros((len(_SITES), 3))
    if drift_scale > 0:
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * drift_scale
        control = control + _SITES[:, 3:4] * v[None, :]
    return WarpField(control)
