"""Watertight procedural identity meshes.

Five families with continuous size parameters: boxes, ellipsoids, capsules,
extruded L-brackets, and extruded toy-car silhouettes. Every constructor
returns a watertight, outward-oriented TriMesh that fits in [-0.4, 0.4]^3.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..geometry import TriMesh

FAMILIES = ("box", "ellipsoid", "capsule", "bracket", "car")


class _VertexPool:
    """Welds vertices by rounded coordinates so shared edges are shared."""

    def __init__(self):
        self.verts = []
        self.index = {}

    def add(self, p):
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        idx = self.index.get(key)
        if idx is None:
            idx = len(self.verts)
            self.verts.append([p[0], p[1], p[2]])
            self.index[key] = idx
        return idx


def _finish(pool, faces, name):
    mesh = TriMesh(np.array(pool.verts), np.array(faces, dtype=np.int64))
    if not mesh.is_watertight():
        raise InvalidInputError(f"{name}: construction produced a non-watertight mesh")
    if mesh.signed_volume() <= 0:
        raise InvalidInputError(f"{name}: inconsistent orientation (negative volume)")
    lo, hi = mesh.bounds()
    if np.any(lo < -0.4 - 1e-9) or np.any(hi > 0.4 + 1e-9):
        raise InvalidInputError(f"{name}: mesh exceeds [-0.4, 0.4]^3")
    return mesh


def make_box(half_extents=(0.25, 0.18, 0.2), segments=6):
    hx, hy, hz = half_extents
    h = np.array([hx, hy, hz], dtype=np.float64)
    if np.any(h <= 0) or np.any(h > 0.4):
        raise InvalidInputError("box half extents must lie in (0, 0.4]")
    pool = _VertexPool()
    faces = []
    n = segments
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, 1):
            grid = np.empty((n + 1, n + 1), dtype=np.int64)
            for iu in range(n + 1):
                for iv in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = h[axis] if side else -h[axis]
                    p[u] = -h[u] + 2 * h[u] * iu / n
                    p[v] = -h[v] + 2 * h[v] * iv / n
                    grid[iu, iv] = pool.add(p)
            for iu in range(n):
                for iv in range(n):
                    a, b = grid[iu, iv], grid[iu + 1, iv]
                    c, d = grid[iu + 1, iv + 1], grid[iu, iv + 1]
                    if side:
                        faces += [[a, b, c], [a, c, d]]
                    else:
                        faces += [[a, c, b], [a, d, c]]
    return _finish(pool, faces, "box")


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
    [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
    [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
])
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def make_ellipsoid(radii=(0.3, 0.22, 0.26), subdivisions=3):
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(radii <= 0) or np.any(radii > 0.4):
        raise InvalidInputError("ellipsoid radii must lie in (0, 0.4]")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = list(_ICO_FACES)
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radii
    mesh = TriMesh(v, np.array(faces, dtype=np.int64))
    if mesh.signed_volume() <= 0 or not mesh.is_watertight():
        raise InvalidInputError("ellipsoid: construction invariant violated")
    return mesh


def make_capsule(radius=0.14, half_length=0.18, n_seg=24, n_rings=6, n_axial=6):
    if radius <= 0 or half_length < 0 or radius + half_length > 0.4:
        raise InvalidInputError("capsule must fit in [-0.4, 0.4]^3")
    rows = []  # (z, rho) from top to bottom
    for i in range(1, n_rings + 1):
        th = 0.5 * np.pi * i / n_rings
        rows.append((half_length + radius * np.cos(th), radius * np.sin(th)))
    for j in range(1, n_axial):
        rows.append((half_length - 2 * half_length * j / n_axial, radius))
    for i in range(n_rings, 0, -1):
        th = 0.5 * np.pi * i / n_rings
        rows.append((-half_length - radius * np.cos(th), radius * np.sin(th)))

    pool = _VertexPool()
    top = pool.add((0.0, 0.0, half_length + radius))
    bottom = pool.add((0.0, 0.0, -half_length - radius))
    angles = 2 * np.pi * np.arange(n_seg) / n_seg
    rings = []
    for z, rho in rows:
        rings.append([pool.add((rho * np.cos(a), rho * np.sin(a), z)) for a in angles])
    faces = []
    for i in range(n_seg):
        k = (i + 1) % n_seg
        faces.append([top, rings[0][i], rings[0][k]])
        faces.append([bottom, rings[-1][k], rings[-1][i]])
    for j in range(len(rings) - 1):
        for i in range(n_seg):
            k = (i + 1) % n_seg
            a, b = rings[j][i], rings[j][k]
            c, d = rings[j + 1][k], rings[j + 1][i]
            faces += [[a, d, c], [a, c, b]]
    return _finish(pool, faces, "capsule")


def _subdivide_profile(profile, max_len):
    out = []
    n = len(profile)
    for i in range(n):
        a = np.asarray(profile[i], dtype=np.float64)
        b = np.asarray(profile[(i + 1) % n], dtype=np.float64)
        out.append(a)
        steps = int(np.ceil(np.linalg.norm(b - a) / max_len))
        for s in range(1, steps):
            out.append(a + (b - a) * s / steps)
    return np.array(out)


def _signed_area(profile):
    x, z = profile[:, 0], profile[:, 1]
    return 0.5 * float(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


def _sees_all_edges(profile, kx, kz):
    n = len(profile)
    for i in range(n):
        ax, az = profile[i]
        bx, bz = profile[(i + 1) % n]
        cross = (ax - kx) * (bz - kz) - (az - kz) * (bx - kx)
        if cross <= 1e-12:
            return False
    return True


def make_extruded(profile, kernel, half_width, n_width=4, seg_len=0.06, name="extruded"):
    """Extrude a star-shaped (x, z) profile along y; caps fan from a kernel.

    The kernel point must see every profile edge (all fan triangles CCW).
    With kernel=None a valid point is searched on a deterministic grid over
    the profile's bounding box; profiles with an empty kernel are rejected.
    """
    profile = _subdivide_profile(profile, seg_len)
    if _signed_area(profile) < 0:
        profile = profile[::-1]
    if kernel is None:
        lo = profile.min(axis=0)
        hi = profile.max(axis=0)
        kernel = next(
            (
                (kx, kz)
                for kz in np.linspace(lo[1] + 1e-4, hi[1] - 1e-4, 81)
                for kx in np.linspace(lo[0] + 1e-4, hi[0] - 1e-4, 61)
                if _sees_all_edges(profile, kx, kz)
            ),
            None,
        )
        if kernel is None:
            raise InvalidInputError(f"{name}: no star-shaped kernel found")
    kx, kz = kernel
    if not _sees_all_edges(profile, kx, kz):
        raise InvalidInputError(f"{name}: profile is not star-shaped from the kernel")

    n = len(profile)
    pool = _VertexPool()
    ys = np.linspace(-half_width, half_width, n_width + 1)
    rings = []
    for y in ys:
        rings.append([pool.add((px, y, pz)) for px, pz in profile])
    faces = []
    for j in range(n_width):
        for i in range(n):
            k = (i + 1) % n
            a, b = rings[j][i], rings[j][k]
            c, d = rings[j + 1][k], rings[j + 1][i]
            faces += [[a, d, c], [a, c, b]]
    lo_center = pool.add((kx, ys[0], kz))
    hi_center = pool.add((kx, ys[-1], kz))
    for i in range(n):
        k = (i + 1) % n
        faces.append([lo_center, rings[0][i], rings[0][k]])
        faces.append([hi_center, rings[-1][k], rings[-1][i]])
    return _finish(pool, faces, name)


def make_bracket(arm_a=0.55, arm_b=0.5, thickness=0.22, half_width=0.12, seg_len=0.06):
    """L-shaped solid: two arms of an L profile, extruded."""
    a, b, t = arm_a, arm_b, thickness
    profile = np.array([
        [0.0, 0.0], [a, 0.0], [a, t], [t, t], [t, b], [0.0, b],
    ])
    profile -= np.array([a / 2, b / 2])
    prof = 0.6 * profile  # keep within the unit-cube margin
    return make_extruded(prof, None, half_width, seg_len=seg_len, name="bracket")


def make_car(length=0.66, body_h=0.16, roof_h=0.3, half_width=0.13, wheel_r=0.045, seg_len=0.05):
    """Toy-car silhouette (hood, windshield, roof, wheels as bumps), extruded."""
    hl = length / 2
    wr = wheel_r
    wx_rear, wx_front = -0.52 * hl, 0.52 * hl
    ww = 0.3 * hl  # wheel bump half-width
    profile = [
        [-hl, 0.0],
        [wx_rear - ww, 0.0],
        [wx_rear - 0.6 * ww, -wr],
        [wx_rear + 0.6 * ww, -wr],
        [wx_rear + ww, 0.0],
        [wx_front - ww, 0.0],
        [wx_front - 0.6 * ww, -wr],
        [wx_front + 0.6 * ww, -wr],
        [wx_front + ww, 0.0],
        [hl, 0.0],
        [hl, body_h],
        [0.45 * hl, body_h],
        [0.2 * hl, roof_h],
        [-0.55 * hl, roof_h],
        [-hl, body_h],
    ]
    profile = np.array(profile)
    profile[:, 1] -= roof_h / 2  # center vertically
    return make_extruded(profile, None, half_width, seg_len=seg_len, name="car")


def make_identity(family, params, rng=None):
    """Build a mesh from a family name and its continuous parameters."""
    if family == "box":
        return make_box(params.get("half_extents", (0.25, 0.18, 0.2)))
    if family == "ellipsoid":
        return make_ellipsoid(params.get("radii", (0.3, 0.22, 0.26)))
    if family == "capsule":
        return make_capsule(params.get("radius", 0.14), params.get("half_length", 0.18))
    if family == "bracket":
        return make_bracket(
            params.get("arm_a", 0.55), params.get("arm_b", 0.5),
            params.get("thickness", 0.22), params.get("half_width", 0.12),
        )
    if family == "car":
        return make_car(
            params.get("length", 0.66), params.get("body_h", 0.16),
            params.get("roof_h", 0.3), params.get("half_width", 0.13),
            params.get("wheel_r", 0.045),
        )
    raise InvalidInputError(f"unknown identity family {family!r}")


def random_identity(rng, family=None):
    """Sample a random identity spec (family + parameters)."""
    family = family or FAMILIES[rng.integers(len(FAMILIES))]
    u = lambda lo, hi: float(lo + (hi - lo) * rng.random())
    if family == "box":
        params = {"half_extents": (u(0.15, 0.3), u(0.12, 0.24), u(0.12, 0.26))}
    elif family == "ellipsoid":
        params = {"radii": (u(0.18, 0.34), u(0.14, 0.26), u(0.14, 0.3))}
    elif family == "capsule":
        params = {"radius": u(0.1, 0.16), "half_length": u(0.1, 0.22)}
    elif family == "bracket":
        params = {"arm_a": u(0.45, 0.6), "arm_b": u(0.4, 0.58),
                  "thickness": u(0.18, 0.26), "half_width": u(0.08, 0.15)}
    elif family == "car":
        params = {"length": u(0.55, 0.72), "body_h": u(0.13, 0.2),
                  "roof_h": u(0.26, 0.34), "half_width": u(0.1, 0.16),
                  "wheel_r": u(0.035, 0.055)}
    else:
        raise InvalidInputError(f"unknown identity family {family!r}")
    return {"family": family, "params": params}
