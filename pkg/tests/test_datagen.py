import hashlib
import os

import numpy as np
import pytest

from f4d.datagen import Dataset, build_dataset, make_warp
from f4d.datagen.shapes import FAMILIES, make_identity, random_identity
from f4d.datagen.warp import _SITES, WarpField
from f4d.errors import InvalidInputError
from f4d.geometry import occupancy, point_mesh_distance


class TestShapes:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_random_identities_valid(self, family):
        rng = np.random.default_rng(hash(family) % 2**32)
        for _ in range(3):
            spec = random_identity(rng, family=family)
            mesh = make_identity(spec["family"], spec["params"])
            assert mesh.is_watertight()
            assert mesh.signed_volume() > 0
            lo, hi = mesh.bounds()
            assert np.all(lo >= -0.4 - 1e-9) and np.all(hi <= 0.4 + 1e-9)


class TestWarpField:
    def test_zero_at_t0(self):
        field = make_warp(0, sigma_w=0.1)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.5, 0.5, size=(100, 3))
        assert np.abs(field.displacement(pts, 0.0)).max() < 1e-12

    def test_interpolates_control_sites(self):
        field = make_warp(2, sigma_w=0.1)
        # At a control site, the field equals control vector minus the t=0
        # slice value at the same spatial location.
        for idx in (0, 40, 77, 134):
            p = _SITES[idx, :3][None]
            t = _SITES[idx, 3]
            t0_idx = idx - idx % 5  # temporal axis is fastest in site layout
            assert np.allclose(_SITES[t0_idx, :3], _SITES[idx, :3])
            assert _SITES[t0_idx, 3] == 0.0
            expected = field.control[idx] - field.control[t0_idx]
            got = field.displacement(p, t)[0]
            assert np.abs(got - expected).max() < 1e-9

    def test_sigma_zero_is_identity(self):
        field = make_warp(3, sigma_w=0.0)
        pts = np.random.default_rng(4).uniform(-0.6, 0.6, size=(50, 3))
        for t in (0.0, 0.3, 1.0):
            assert np.abs(field.displacement(pts, t)).max() == 0.0

    def test_displacement_bounded_by_weights(self):
        field = make_warp(5, sigma_w=0.12)
        bound = field.magnitude_bound()
        mesh = make_identity("ellipsoid", {})
        for t in np.linspace(0, 1, 6):
            d = field.displacement(mesh.vertices, t)
            assert np.linalg.norm(d, axis=1).max() <= bound + 1e-12

    def test_warp_mesh_t0_identical(self):
        field = make_warp(6, sigma_w=0.1)
        mesh = make_identity("box", {})
        warped = field.warp_mesh(mesh, 0.0)
        assert np.abs(warped.vertices - mesh.vertices).max() < 1e-12
        assert np.array_equal(warped.faces, mesh.faces)

    def test_drift_moves_field(self):
        field = make_warp(7, sigma_w=0.0, drift_scale=0.3)
        pts = np.zeros((1, 3))
        d1 = field.displacement(pts, 1.0)[0]
        assert np.linalg.norm(d1) == pytest.approx(0.3, rel=0.05)

    def test_round_trip_dict(self):
        field = make_warp(8, sigma_w=0.05)
        clone = WarpField.from_dict(field.to_dict())
        pts = np.random.default_rng(9).uniform(-0.4, 0.4, size=(20, 3))
        assert np.allclose(field.displacement(pts, 0.7), clone.displacement(pts, 0.7))


def _dir_hash(root):
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            h.update(open(path, "rb").read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    return build_dataset(out, n_id=2, n_motion=2, seed=11, L=5, n_points=64,
                         n_query=256, sigma_w=0.06)


class TestBuildDataset:
    def test_cross_product_size(self, small_dataset):
        assert len(small_dataset.keys()) == 4

    def test_shared_motion_has_identical_warp(self, small_dataset):
        w_a = small_dataset.warp(0, 1)
        w_b = small_dataset.warp(1, 1)
        assert np.array_equal(w_a.control, w_b.control)

    def test_deterministic_rebuild(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        build_dataset(a, n_id=2, n_motion=2, seed=3, L=3, n_points=32, n_query=128)
        build_dataset(b, n_id=2, n_motion=2, seed=3, L=3, n_points=32, n_query=128)
        assert _dir_hash(a) == _dir_hash(b)

    def test_inputs_on_rest_surface_at_t0(self, small_dataset):
        ds = small_dataset
        s = ds.load(0, 0)
        rest = ds.rest_mesh(0, 0)
        d = point_mesh_distance(s.inputs[0], rest)
        assert d.max() < 1e-9

    def test_trajectory_correspondence(self, small_dataset):
        ds = small_dataset
        s = ds.load(1, 1)
        warp = ds.warp(1, 1)
        base_raw = s.inputs[0] / ds.scale - ds.translation
        for li, t in enumerate(s.times):
            advected = (warp.displace(base_raw, t) + ds.translation) * ds.scale
            assert np.abs(advected - s.inputs[li]).max() < 1e-9

    def test_far_outside_labeled_zero(self, small_dataset):
        s = small_dataset.load(0, 0)
        far = np.abs(s.q0_points).max(axis=1) > 0.49
        if far.any():
            assert np.all(s.q0_labels[far] == 0)

    def test_normalized_coordinates_in_cube(self, small_dataset):
        for key in small_dataset.keys():
            s = small_dataset.load(*key)
            assert np.abs(s.inputs).max() <= 0.5 + 1e-6

    def test_uniform_label_fraction_matches_volume(self, tmp_path):
        ds = build_dataset(tmp_path / "v", n_id=2, n_motion=2, seed=5, L=3,
                           n_points=32, n_query=4096, sigma_w=0.0)
        s = ds.load(0, 0)
        rest = ds.rest_mesh(0, 0)
        n_uni = len(s.q0_points) // 2
        frac = s.q0_labels[:n_uni].mean()
        vol = rest.signed_volume()  # bounding volume is the unit cube
        assert abs(frac - vol) < 0.02

    def test_tau_consistent_labels(self, small_dataset):
        ds = small_dataset
        s = ds.load(0, 1)
        relabeled = ds.ground_truth_occupancy(0, 1, s.tau, s.qtau_points, rng=0)
        assert np.mean(relabeled == s.qtau_labels) > 0.995

    def test_min_sizes_enforced(self, tmp_path):
        with pytest.raises(InvalidInputError):
            build_dataset(tmp_path / "x", n_id=1, n_motion=2)

    def test_splits(self, tmp_path):
        ds = build_dataset(tmp_path / "s", n_id=3, n_motion=4, seed=7, L=3,
                           n_points=32, n_query=128, n_test_motions=1, n_unseen_ids=1)
        train = ds.keys("train")
        test = ds.keys("test")
        unseen = ds.keys("test_unseen_id")
        assert len(train) + len(test) + len(unseen) == 12
        assert all(m != 3 and i != 2 for i, m in train)
        assert all(m == 3 for i, m in test)
        assert all(i == 2 for i, m in unseen)
