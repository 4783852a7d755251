"""On-disk warping-shapes dataset: identities x motions with exact labels.

Layout:
    root/manifest.json                  global transform, splits, config
    root/<split>/<id>_<motion>/
        inputs.f64        [L, N, 3] point trajectories (normalized space)
        queries_t0.f64    [n_query, 4] xyz + occupancy label at t=0
        queries_tau.f64   [n_query, 4] xyz + label at the sampled time
        meta.json         tau, seeds, warp control vectors, identity spec
        rest_mesh.off     normalized rest-pose mesh

Every identity/motion combination is materialized, so swapped-code
supervision and transfer evaluation always have exact ground truth.
All coordinates on disk live in the globally normalized [-0.5, 0.5]^3 frame.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..geometry import TriMesh, occupancy, read_off, sample_surface, write_off
from .shapes import FAMILIES, make_identity, random_identity
from .warp import WarpField, make_warp

DATASET_VERSION = 1


@dataclass
class SequenceSample:
    """One loaded identity/motion sequence with its query supervision."""

    identity_id: int
    motion_id: int
    inputs: np.ndarray       # [L, N, 3]
    times: np.ndarray        # [L]
    q0_points: np.ndarray    # [n_query, 3]
    q0_labels: np.ndarray    # [n_query]
    qtau_points: np.ndarray
    qtau_labels: np.ndarray
    tau: float
    meta: dict
    path: str

    @property
    def key(self):
        return (self.identity_id, self.motion_id)


def _write_f64(path, arr):
    np.asarray(arr, dtype="<f8").tofile(path)


def _read_f64(path, shape):
    return np.fromfile(path, dtype="<f8").reshape(shape)


def _json_dump(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)


def build_dataset(
    out_dir,
    n_id,
    n_motion,
    seed=0,
    L=17,
    n_points=300,
    n_query=2048,
    sigma_w=0.08,
    drift_scale=0.0,
    sigma_near=0.05,
    bounding="unit_cube",
    n_test_motions=None,
    n_unseen_ids=None,
    jobs=1,
):
    """Materialize the full identity x motion cross product to disk.

    Splits are deterministic: the last ``n_test_motions`` motion ids form
    the test split and the last ``n_unseen_ids`` identities are held out
    entirely (their combos land in test_unseen_id). Exchange training needs
    at least two identities and two motions.
    """
    if n_id < 2 or n_motion < 2:
        raise InvalidInputError("need n_id >= 2 and n_motion >= 2 for exchange training")
    if bounding not in ("unit_cube", "tight"):
        raise InvalidInputError(f"unknown bounding volume {bounding!r}")
    if n_test_motions is None:
        n_test_motions = n_motion // 4
    if n_unseen_ids is None:
        n_unseen_ids = 1 if n_id >= 3 else 0
    if n_motion - n_test_motions < 2 or n_id - n_unseen_ids < 2:
        raise InvalidInputError("splits leave fewer than 2 train identities/motions")

    root = np.random.SeedSequence(seed)
    id_seeds = root.spawn(n_id)
    motion_seeds = root.spawn(n_motion)

    identities = []
    for i in range(n_id):
        rng = np.random.default_rng(id_seeds[i])
        spec = random_identity(rng, family=FAMILIES[i % len(FAMILIES)])
        identities.append(spec)
    meshes = [make_identity(s["family"], s["params"]) for s in identities]
    warps = [make_warp(np.random.default_rng(motion_seeds[m]), sigma_w, drift_scale)
             for m in range(n_motion)]

    times = np.linspace(0.0, 1.0, L)
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for mesh in meshes:
        for warp in warps:
            for t in times:
                v = warp.displace(mesh.vertices, t)
                lo = np.minimum(lo, v.min(axis=0))
                hi = np.maximum(hi, v.max(axis=0))
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise InvalidInputError("degenerate dataset: zero spatial extent")
    scale = 1.0 / extent
    translation = (-(lo + hi) / 2.0).tolist()

    test_motions = list(range(n_motion - n_test_motions, n_motion))
    unseen_ids = list(range(n_id - n_unseen_ids, n_id))

    def split_of(i, m):
        if i in unseen_ids:
            return "test_unseen_id"
        if m in test_motions:
            return "test"
        return "train"

    os.makedirs(out_dir, exist_ok=True)
    combos = [(i, m) for i in range(n_id) for m in range(n_motion)]
    combo_seeds = {c: s for c, s in zip(combos, root.spawn(len(combos)))}

    jobs = max(1, int(jobs))
    tasks = [
        (
            out_dir, i, m, split_of(i, m), identities[i], warps[m].to_dict(),
            combo_seeds[(i, m)], L, n_points, n_query, sigma_near, bounding,
            scale, translation, sigma_w,
        )
        for i, m in combos
    ]
    if jobs == 1:
        rel_paths = [_generate_sample(*t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rel_paths = list(pool.map(_generate_sample_star, tasks))

    manifest = {
        "version": DATASET_VERSION,
        "n_id": n_id,
        "n_motion": n_motion,
        "L": L,
        "n_points": n_points,
        "n_query": n_query,
        "sigma_w": sigma_w,
        "drift_scale": drift_scale,
        "sigma_near": sigma_near,
        "bounding": bounding,
        "seed": seed,
        "scale": scale,
        "translation": translation,
        "test_motions": test_motions,
        "unseen_ids": unseen_ids,
        "samples": {f"{i}_{m}": p for (i, m), p in zip(combos, rel_paths)},
    }
    _json_dump(manifest, os.path.join(out_dir, "manifest.json"))
    return Dataset(out_dir)


def _generate_sample_star(args):
    return _generate_sample(*args)


def _generate_sample(out_dir, i, m, split, identity, warp_dict, seed_seq, L, n_points,
                     n_query, sigma_near, bounding, scale, translation, sigma_w):
    rng = np.random.default_rng(seed_seq)
    mesh = make_identity(identity["family"], identity["params"])
    warp = WarpField.from_dict(warp_dict)
    times = np.linspace(0.0, 1.0, L)
    translation = np.asarray(translation)

    def to_norm(p):
        return (p + translation) * scale

    def from_norm(p):
        return p / scale - translation

    # True point trajectories: rest-surface samples advected by the field.
    base = sample_surface(mesh, n_points, rng)
    inputs = np.stack([to_norm(warp.displace(base, t)) for t in times])

    tau_index = int(rng.integers(1, L))
    tau = float(times[tau_index])

    def make_queries(t):
        warped = warp.warp_mesh(mesh, t)
        n_uni = n_query // 2
        n_near = n_query - n_uni
        if bounding == "unit_cube":
            uni = rng.uniform(-0.5, 0.5, size=(n_uni, 3))
        else:
            v = to_norm(warped.vertices)
            lo, hi = v.min(axis=0), v.max(axis=0)
            pad = 0.03
            uni = rng.uniform(lo - pad, hi + pad, size=(n_uni, 3))
        near = to_norm(sample_surface(warped, n_near, rng))
        near = near + rng.normal(0.0, sigma_near, size=near.shape)
        pts = np.concatenate([uni, near])
        labels = occupancy(warped, from_norm(pts), rng=rng)
        return pts, labels.astype(np.float64)

    q0_pts, q0_lab = make_queries(0.0)
    qt_pts, qt_lab = make_queries(tau)

    rel = os.path.join(split, f"{i}_{m}")
    sdir = os.path.join(out_dir, rel)
    os.makedirs(sdir, exist_ok=True)
    _write_f64(os.path.join(sdir, "inputs.f64"), inputs)
    _write_f64(os.path.join(sdir, "queries_t0.f64"),
               np.concatenate([q0_pts, q0_lab[:, None]], axis=1))
    _write_f64(os.path.join(sdir, "queries_tau.f64"),
               np.concatenate([qt_pts, qt_lab[:, None]], axis=1))
    write_off(TriMesh(to_norm(mesh.vertices), mesh.faces), os.path.join(sdir, "rest_mesh.off"))
    _json_dump(
        {
            "identity_id": i,
            "motion_id": m,
            "identity": identity,
            "warp": warp_dict,
            "tau": tau,
            "tau_index": tau_index,
            "L": L,
            "n_points": n_points,
            "sigma_w": sigma_w,
            "sigma_near": sigma_near,
            "scale": scale,
            "translation": translation.tolist(),
            "seed_state": list(seed_seq.entropy if isinstance(seed_seq.entropy, tuple) else [seed_seq.entropy])
            + list(seed_seq.spawn_key),
        },
        os.path.join(sdir, "meta.json"),
    )
    return rel


class Dataset:
    """Loader over a built dataset directory."""

    def __init__(self, root):
        self.root = str(root)
        mpath = os.path.join(self.root, "manifest.json")
        if not os.path.exists(mpath):
            raise InvalidInputError(f"{root}: no manifest.json (not a dataset)")
        with open(mpath) as f:
            self.manifest = json.load(f)
        self.scale = float(self.manifest["scale"])
        self.translation = np.asarray(self.manifest["translation"], dtype=np.float64)
        self.L = int(self.manifest["L"])
        self.n_points = int(self.manifest["n_points"])
        self.times = np.linspace(0.0, 1.0, self.L)

    def keys(self, split=None):
        out = []
        for key, rel in sorted(self.manifest["samples"].items()):
            if split is None or rel.startswith(split + os.sep) or rel.split("/")[0] == split:
                i, m = key.split("_")
                out.append((int(i), int(m)))
        return out

    def sample_dir(self, i, m):
        rel = self.manifest["samples"].get(f"{i}_{m}")
        if rel is None:
            raise InvalidInputError(f"no sample for identity {i}, motion {m}")
        return os.path.join(self.root, rel)

    def load(self, i, m):
        sdir = self.sample_dir(i, m)
        with open(os.path.join(sdir, "meta.json")) as f:
            meta = json.load(f)
        L, N = meta["L"], meta["n_points"]
        nq = int(self.manifest["n_query"])
        inputs = _read_f64(os.path.join(sdir, "inputs.f64"), (L, N, 3))
        q0 = _read_f64(os.path.join(sdir, "queries_t0.f64"), (nq, 4))
        qt = _read_f64(os.path.join(sdir, "queries_tau.f64"), (nq, 4))
        return SequenceSample(
            identity_id=i,
            motion_id=m,
            inputs=inputs,
            times=np.linspace(0.0, 1.0, L),
            q0_points=q0[:, :3],
            q0_labels=q0[:, 3],
            qtau_points=qt[:, :3],
            qtau_labels=qt[:, 3],
            tau=float(meta["tau"]),
            meta=meta,
            path=sdir,
        )

    def rest_mesh(self, i, m):
        return read_off(os.path.join(self.sample_dir(i, m), "rest_mesh.off"))

    def warp(self, i, m):
        with open(os.path.join(self.sample_dir(i, m), "meta.json")) as f:
            meta = json.load(f)
        return WarpField.from_dict(meta["warp"])

    def ground_truth_mesh(self, i, m, t):
        """Normalized warped mesh of combo (i, m) at time t."""
        rest = self.rest_mesh(i, m)
        warp = self.warp(i, m)
        raw = rest.vertices / self.scale - self.translation
        warped = warp.displace(raw, t)
        return TriMesh((warped + self.translation) * self.scale, rest.faces)

    def ground_truth_occupancy(self, i, m, t, points_norm, rng=None):
        """Exact labels of normalized points against the warped mesh."""
        mesh = self.ground_truth_mesh(i, m, t)
        return occupancy(mesh, np.asarray(points_norm), rng=rng)
