"""Evaluation metrics: symmetric chamfer distance and volumetric IoU."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from .occupancy import OccupancyGrid


class SpatialHash:
    """Uniform-cell hash for exact nearest-neighbor distance queries."""

    def __init__(self, points, cell=None):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise InvalidInputError("cannot hash an empty point set")
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        if cell is None:
            extent = float(np.max(hi - lo))
            cell = extent / max(1.0, len(self.points) ** (1 / 3)) if extent > 0 else 1.0
        self.cell = max(cell, 1e-12)
        self.lo = lo
        keys = np.floor((self.points - lo) / self.cell).astype(np.int64)
        self.cells = {}
        for idx, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(idx)
        self.cells = {k: self.points[v] for k, v in self.cells.items()}
        self.key_lo = keys.min(axis=0)
        self.key_hi = keys.max(axis=0)

    def nearest_distance(self, q):
        """Exact distance from q to the closest stored point."""
        q = np.asarray(q, dtype=np.float64)
        base = np.floor((q - self.lo) / self.cell).astype(np.int64)
        max_ring = int(np.max(np.maximum(self.key_hi - base, base - self.key_lo))) + 1
        best = np.inf
        for r in range(max_ring + 1):
            pts = self._ring_points(base, r)
            if pts is not None:
                d = np.min(np.linalg.norm(pts - q, axis=1))
                best = min(best, d)
            # Cells in ring r+1 and beyond are at least r * cell away.
            if best <= r * self.cell:
                break
        return best

    def nearest_distances(self, queries):
        return np.array([self.nearest_distance(q) for q in np.asarray(queries).reshape(-1, 3)])

    def _ring_points(self, base, r):
        found = []
        if r == 0:
            cell = self.cells.get(tuple(base))
            return cell if cell is not None else None
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    cell = self.cells.get((base[0] + dx, base[1] + dy, base[2] + dz))
                    if cell is not None:
                        found.append(cell)
        if not found:
            return None
        return np.concatenate(found)


def chamfer(a, b):
    """Symmetric chamfer distance between two point sets.

    0.5 * mean nearest-neighbor distance a -> b plus 0.5 * mean b -> a.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise InvalidInputError("chamfer distance of an empty point set")
    d_ab = SpatialHash(b).nearest_distances(a).mean()
    d_ba = SpatialHash(a).nearest_distances(b).mean()
    return 0.5 * float(d_ab) + 0.5 * float(d_ba)


def volumetric_iou(a, b):
    """Intersection over union of two binary occupancy samplings.

    Accepts boolean/probability label arrays over identical sample points,
    or two OccupancyGrids on the same lattice. Probabilities are binarized
    at 0.5. Two empty sets have IoU 1.0.
    """
    if isinstance(a, OccupancyGrid) or isinstance(b, OccupancyGrid):
        if not (isinstance(a, OccupancyGrid) and isinstance(b, OccupancyGrid)):
            raise InvalidInputError("cannot compare a grid with a point-label set")
        if (
            a.resolution != b.resolution
            or not np.allclose(a.origin, b.origin)
            or not np.isclose(a.cell_size, b.cell_size)
        ):
            raise InvalidInputError("grids sample different lattices")
        av, bv = a.values, b.values
    else:
        av = np.asarray(a, dtype=np.float64)
        bv = np.asarray(b, dtype=np.float64)
        if av.shape != bv.shape:
            raise InvalidInputError(f"label shapes differ: {av.shape} vs {bv.shape}")
    ab = av >= 0.5
    bb = bv >= 0.5
    union = np.logical_or(ab, bb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ab, bb).sum() / union)
