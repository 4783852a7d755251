"""Indexed triangle meshes, global normalization, and surface sampling."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError


class TriMesh:
    """Triangle surface with shared vertices.

    Vertices are float64 [V, 3]; faces are int64 [F, 3] indices. Face
    orientation is taken as given; constructors in this package produce
    consistently outward-oriented surfaces.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise InvalidInputError("face index out of range")
        if self.faces.size and self.faces.min() < 0:
            raise InvalidInputError("negative face index")

    def __repr__(self):
        return f"TriMesh(V={len(self.vertices)}, F={len(self.faces)})"

    @property
    def is_empty(self):
        return len(self.faces) == 0

    def triangle_corners(self):
        """[F, 3, 3] corner coordinates."""
        return self.vertices[self.faces]

    def face_areas(self):
        tc = self.triangle_corners()
        cross = np.cross(tc[:, 1] - tc[:, 0], tc[:, 2] - tc[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def signed_volume(self):
        """Positive for outward-oriented closed surfaces."""
        tc = self.triangle_corners()
        return float(np.einsum("ij,ij->i", tc[:, 0], np.cross(tc[:, 1], tc[:, 2])).sum() / 6.0)

    def edge_counts(self):
        """Map from undirected edge to number of incident faces."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def is_watertight(self):
        """Every undirected edge shared by exactly two faces, traversed once per direction."""
        if self.is_empty:
            return False
        uniq, counts = self.edge_counts()
        if not np.all(counts == 2):
            return False
        directed = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        d_uniq, d_counts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(d_counts == 1))

    def euler_characteristic(self):
        uniq, _ = self.edge_counts()
        n_v = len(np.unique(self.faces.reshape(-1)))
        return n_v - len(uniq) + len(self.faces)

    def bounds(self):
        if len(self.vertices) == 0:
            raise InvalidInputError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, scale, translation):
        """Apply v' = (v + translation) * scale."""
        return TriMesh((self.vertices + np.asarray(translation)) * scale, self.faces)

    def copy(self):
        return TriMesh(self.vertices.copy(), self.faces.copy())


def normalize_to_unit_cube(meshes):
    """Fit a mesh collection into [-0.5, 0.5]^3 with one shared transform.

    Returns (transformed meshes, scale, translation) such that
    v' = (v + translation) * scale. The same transform applies to every
    mesh, so relative sizes across the collection are preserved.
    """
    meshes = list(meshes)
    if not meshes:
        raise InvalidInputError("normalize_to_unit_cube needs at least one mesh")
    lo = np.min([m.bounds()[0] for m in meshes], axis=0)
    hi = np.max([m.bounds()[1] for m in meshes], axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0.0:
        raise InvalidInputError("degenerate dataset: zero spatial extent")
    scale = 1.0 / extent
    translation = -(lo + hi) / 2.0
    return [m.transformed(scale, translation) for m in meshes], scale, translation


def apply_transform(points, scale, translation):
    return (np.asarray(points, dtype=np.float64) + np.asarray(translation)) * scale


def invert_transform(points, scale, translation):
    return np.asarray(points, dtype=np.float64) / scale - np.asarray(translation)


def sample_surface(mesh, n, seed):
    """Area-weighted uniform samples on the triangle surface.

    Deterministic for a given seed (int or numpy Generator).
    """
    if mesh.is_empty:
        raise InvalidInputError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0.0:
        raise InvalidInputError("cannot sample a zero-area mesh")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    tc = mesh.triangle_corners()[idx]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return w0[:, None] * tc[:, 0] + w1[:, None] * tc[:, 1] + w2[:, None] * tc[:, 2]


def point_mesh_distance(points, mesh):
    """Exact distance from each point to the closest triangle."""
    tc = mesh.triangle_corners()
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    chunk = max(1, int(2_000_000 / max(len(tc), 1)))
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk]
        out[s : s + chunk] = _point_tri_dist_block(p, tc).min(axis=1)
    return out


def _point_tri_dist_block(p, tc):
    """[P, F] distances: min over the three edge segments and the interior
    face projection. Sequential region tests are avoided on purpose."""
    best = None
    for i, j in ((0, 1), (1, 2), (2, 0)):
        a = tc[:, i]
        ab = tc[:, j] - a
        denom = np.einsum("fk,fk->f", ab, ab)
        denom = np.where(denom > 0, denom, 1.0)
        t = np.einsum("pfk,fk->pf", p[:, None, :] - a[None], ab) / denom
        t = np.clip(t, 0.0, 1.0)
        closest = a[None] + t[..., None] * ab[None]
        d = np.linalg.norm(p[:, None, :] - closest, axis=2)
        best = d if best is None else np.minimum(best, d)

    a, b, c = tc[:, 0], tc[:, 1], tc[:, 2]
    n = np.cross(b - a, c - a)
    nn = np.einsum("fk,fk->f", n, n)
    nn_safe = np.where(nn > 0, nn, 1.0)
    pa = p[:, None, :] - a[None]
    dist_plane = np.einsum("pfk,fk->pf", pa, n) / np.sqrt(nn_safe)
    proj = p[:, None, :] - dist_plane[..., None] * (n / np.sqrt(nn_safe)[:, None])[None]
    # Barycentric test of the projection.
    v0 = (b - a)[None]
    v1 = (c - a)[None]
    v2 = proj - a[None]
    d00 = np.einsum("zfk,zfk->zf", v0, v0)
    d01 = np.einsum("zfk,zfk->zf", v0, v1)
    d11 = np.einsum("zfk,zfk->zf", v1, v1)
    d20 = np.einsum("pfk,zfk->pf", v2, v0)
    d21 = np.einsum("pfk,zfk->pf", v2, v1)
    den = d00 * d11 - d01 * d01
    den = np.where(np.abs(den) > 0, den, 1.0)
    u = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    inside = (u >= 0) & (w >= 0) & (u + w <= 1) & (nn[None] > 0)
    face_d = np.where(inside, np.abs(dist_plane), np.inf)
    return np.minimum(best, face_d)
