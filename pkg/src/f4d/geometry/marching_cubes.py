"""Marching cubes surface extraction from occupancy grids.

Uses the standard 256-case triangulation, derived once at import time by
walking each cube face in outward-CCW order and linking iso-crossings into
directed cycles. Faces with four crossings connect so that the two inside
corners stay separated; neighboring cells make the same choice, so the
output is crack-free. Cycle direction is chosen so triangle normals point
from high values toward low values (outward for occupancy).
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from .mesh import TriMesh

# Corner c sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1).
_CORNER_XYZ = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])

# Undirected cube edges: x-edges, y-edges, z-edges (lower corner first).
EDGES = [
    (0, 1), (2, 3), (4, 5), (6, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
]
_EDGE_INDEX = {e: i for i, e in enumerate(EDGES)}
_EDGE_AXIS = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]

# Cube faces as corner cycles, counter-clockwise seen from outside the cube.
FACES = [
    (0, 2, 3, 1),  # z = 0
    (4, 5, 7, 6),  # z = 1
    (0, 4, 6, 2),  # x = 0
    (1, 3, 7, 5),  # x = 1
    (0, 1, 5, 4),  # y = 0
    (2, 6, 7, 3),  # y = 1
]


def _build_table():
    table = []
    for mask in range(256):
        inside = [(mask >> c) & 1 for c in range(8)]
        succ = {}
        for face in FACES:
            crossings = []
            for k in range(4):
                a, b = face[k], face[(k + 1) % 4]
                if inside[a] != inside[b]:
                    eid = _EDGE_INDEX[(min(a, b), max(a, b))]
                    crossings.append((eid, "exit" if inside[a] else "entry"))
            if not crossings:
                continue
            if crossings[0][1] == "exit":
                crossings = crossings[1:] + crossings[:1]
            for k in range(0, len(crossings), 2):
                entry, exit_ = crossings[k], crossings[k + 1]
                succ[entry[0]] = exit_[0]
        triangles = []
        seen = set()
        for start in list(succ):
            if start in seen:
                continue
            cycle = [start]
            seen.add(start)
            cur = succ[start]
            while cur != start:
                cycle.append(cur)
                seen.add(cur)
                cur = succ[cur]
            for k in range(1, len(cycle) - 1):
                triangles.append((cycle[0], cycle[k], cycle[k + 1]))
        table.append(tuple(triangles))
    return tuple(table)


TRI_TABLE = _build_table()


def marching_cubes(grid, level=0.4):
    """Extract the iso-surface of an OccupancyGrid at the given level.

    Vertex positions are linearly interpolated along lattice edges; vertices
    on shared edges are welded, so the mesh is watertight whenever the
    surface does not cross the grid boundary. A grid with no crossings
    yields an empty mesh.
    """
    res = grid.resolution
    if min(res) < 2:
        raise InvalidInputError("marching cubes needs resolution >= 2 per axis")
    values = np.array(grid.values, dtype=np.float64)
    # Nudge exact hits so corner classification is strict.
    values[values == level] = level + 1e-12

    inside = (values > level).astype(np.uint8)
    nx, ny, nz = res
    masks = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for c in range(8):
        dx, dy, dz = _CORNER_XYZ[c]
        masks |= inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.uint16) << c
    active = np.argwhere((masks != 0) & (masks != 255))
    if len(active) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    verts = []
    vert_index = {}
    faces = []
    origin = grid.origin + 0.5 * grid.cell_size
    cs = grid.cell_size

    def edge_vertex(ci, cj, ck, eid):
        a, b = EDGES[eid]
        ax, ay, az = _CORNER_XYZ[a]
        node_a = (ci + ax, cj + ay, ck + az)
        key = (_EDGE_AXIS[eid], *node_a)
        idx = vert_index.get(key)
        if idx is not None:
            return idx
        bx, by, bz = _CORNER_XYZ[b]
        node_b = (ci + bx, cj + by, ck + bz)
        va = values[node_a]
        vb = values[node_b]
        t = (level - va) / (vb - va)
        pa = origin + np.array(node_a) * cs
        pb = origin + np.array(node_b) * cs
        pos = pa + t * (pb - pa)
        idx = len(verts)
        verts.append(pos)
        vert_index[key] = idx
        return idx

    for ci, cj, ck in active:
        for tri in TRI_TABLE[masks[ci, cj, ck]]:
            faces.append([edge_vertex(ci, cj, ck, e) for e in tri])

    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))
