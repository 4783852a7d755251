import numpy as np
import pytest

from f4d import autodiff as ad
from f4d.autodiff import Tensor
from f4d.errors import InvalidInputError, VersionError
from f4d.model import Model, ModelConfig
from f4d.odeint import SolverConfig


def tiny_model(code_dim=8, hidden=8, L=3, seed=0):
    return Model(ModelConfig(code_dim=code_dim, hidden=hidden, seq_len=L, seed=seed))


@pytest.fixture(scope="module")
def model():
    return tiny_model(code_dim=16, hidden=16, L=4, seed=1)


def random_seq(rng, L=4, n=32):
    base = rng.uniform(-0.3, 0.3, size=(n, 3))
    drift = rng.normal(0, 0.05, size=(L, 1, 3))
    return base[None] + drift


class TestEncoders:
    def test_permutation_invariance_exact(self, model):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.4, 0.4, size=(50, 3))
        perm = rng.permutation(50)
        a = model.encode_identity(pts).data
        b = model.encode_identity(pts[perm]).data
        assert np.array_equal(a, b)

    def test_duplication_invariance_exact(self, model):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.4, 0.4, size=(30, 3))
        a = model.encode_pose(pts).data
        b = model.encode_pose(np.concatenate([pts, pts])).data
        assert np.array_equal(a, b)

    def test_different_shapes_differ(self, model):
        rng = np.random.default_rng(2)
        a = model.encode_identity(rng.uniform(-0.3, 0.3, size=(40, 3))).data
        b = model.encode_identity(rng.uniform(-0.3, 0.3, size=(40, 3)) * 0.5).data
        assert np.linalg.norm(a - b) > 0

    def test_motion_encoder_trajectory_permutation(self, model):
        rng = np.random.default_rng(3)
        seq = random_seq(rng)
        perm = rng.permutation(seq.shape[1])
        a = model.encode_motion(seq).data
        b = model.encode_motion(seq[:, perm]).data
        assert np.array_equal(a, b)

    def test_motion_static_vs_moving_differ(self, model):
        rng = np.random.default_rng(4)
        base = rng.uniform(-0.3, 0.3, size=(32, 3))
        static = np.tile(base[None], (4, 1, 1))
        moving = static + np.linspace(0, 0.2, 4)[:, None, None]
        a = model.encode_motion(static).data
        b = model.encode_motion(moving).data
        assert np.linalg.norm(a - b) > 0

    def test_motion_determinism(self, model):
        rng = np.random.default_rng(5)
        seq = random_seq(rng)
        assert np.array_equal(model.encode_motion(seq).data, model.encode_motion(seq).data)

    def test_wrong_length_rejected(self, model):
        rng = np.random.default_rng(6)
        with pytest.raises(InvalidInputError):
            model.encode_motion(random_seq(rng, L=7))

    def test_empty_cloud_rejected(self, model):
        with pytest.raises(InvalidInputError):
            model.encode_identity(np.zeros((0, 3)))

    def test_batched_matches_single(self, model):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.4, 0.4, size=(3, 25, 3))
        batched = model.encode_identity(pts).data
        for i in range(3):
            assert np.allclose(batched[i], model.encode_identity(pts[i]).data)


class TestTransformPose:
    def test_time_zero_identity_exact(self, model):
        rng = np.random.default_rng(8)
        c_p = Tensor(rng.normal(size=16))
        c_m = Tensor(rng.normal(size=16))
        traj = model.transform_pose(c_p, c_m, [0.0])
        assert np.array_equal(traj.data[0], c_p.data)

    def test_zero_init_field_constant_trajectory(self):
        m = tiny_model(code_dim=8, hidden=8, L=3, seed=9)
        rng = np.random.default_rng(9)
        c_p = Tensor(rng.normal(size=8))
        c_m = Tensor(rng.normal(size=8))
        traj = m.transform_pose(c_p, c_m, [0.0, 0.5, 1.0])
        for i in range(3):
            assert np.array_equal(traj.data[i], c_p.data)

    def test_continuity_under_refinement(self, model):
        # Make the flow nonzero, then check max adjacent gap halves with dt.
        rng = np.random.default_rng(10)
        model.dynamics.fc_out.w.data = rng.normal(0, 0.1, size=model.dynamics.fc_out.w.shape)
        c_p = Tensor(rng.normal(size=16))
        c_m = Tensor(rng.normal(size=16))
        gaps = []
        for L in (9, 17):
            times = np.linspace(0, 1, L)
            traj = model.transform_pose(c_p, c_m, times).data
            gaps.append(np.abs(np.diff(traj, axis=0)).max())
        model.dynamics.fc_out.w.data = np.zeros_like(model.dynamics.fc_out.w.data)
        assert gaps[1] <= 0.6 * gaps[0]

    def test_times_outside_unit_interval_rejected(self, model):
        c = Tensor(np.zeros(16))
        with pytest.raises(InvalidInputError):
            model.transform_pose(c, c, [0.0, 1.2])


class TestDecoder:
    def test_outputs_in_unit_interval(self, model):
        rng = np.random.default_rng(11)
        probs = model.decode_occupancy(
            rng.uniform(-0.5, 0.5, size=(64, 3)), rng.normal(size=16), rng.normal(size=16)
        )
        assert np.all(probs > 0) and np.all(probs < 1)

    def test_deterministic(self, model):
        rng = np.random.default_rng(12)
        pts = rng.uniform(-0.5, 0.5, size=(32, 3))
        ci, cp = rng.normal(size=16), rng.normal(size=16)
        assert np.array_equal(
            model.decode_occupancy(pts, ci, cp), model.decode_occupancy(pts, ci, cp)
        )

    def test_nonfinite_codes_rejected(self, model):
        pts = np.zeros((4, 3))
        bad = np.full(16, np.nan)
        with pytest.raises(InvalidInputError):
            model.decode_occupancy(pts, bad, np.zeros(16))

    def test_empty_field_gives_empty_mesh(self, model):
        # Saturate the output bias so occupancy is ~0 everywhere.
        model.decoder.fc_out.b.data = np.array([-30.0])
        mesh = model.reconstruct_frame(np.zeros(16), np.zeros(16), grid_res=16)
        model.decoder.fc_out.b.data = np.array([0.0])
        assert mesh.is_empty


class TestEndToEndGradient:
    def test_encoder_weight_matches_finite_difference(self):
        m = tiny_model(code_dim=8, hidden=8, L=3, seed=13)
        m.cfg.solver = SolverConfig(rtol=1e-8, atol=1e-10)
        rng = np.random.default_rng(13)
        # Give the dynamics a nonzero flow so the adjoint path is exercised.
        m.dynamics.fc_out.w.data = rng.normal(0, 0.05, size=m.dynamics.fc_out.w.shape)
        seq = random_seq(rng, L=3, n=16)
        q_pts = rng.uniform(-0.4, 0.4, size=(24, 3))
        q_lab = (rng.random(24) < 0.5).astype(np.float64)

        def loss_value():
            c_i, c_p, c_m = m.encode(seq)
            traj = m.transform_pose(
                ad.reshape(c_p, (1, 8)), ad.reshape(c_m, (1, 8)), [0.0, 0.7]
            )
            c_pt = traj[1][0]
            cond = Model.build_cond(c_i, c_pt)
            cond_rows = ad.broadcast_to(ad.reshape(cond, (1, 16)), (24, 16))
            logits = m.decode_logits(Tensor(q_pts), cond_rows)
            return ad.bce_with_logits(logits, Tensor(q_lab))

        loss = loss_value()
        ad.backward(loss)
        p = m.enc_identity.fc_in.w
        analytic = p.grad.copy()

        idx = (1, 2)
        h = 1e-5
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = loss_value().item()
        p.data[idx] = orig - h
        down = loss_value().item()
        p.data[idx] = orig
        fd = (up - down) / (2 * h)
        denom = max(abs(fd), abs(analytic[idx]), 1e-10)
        assert abs(analytic[idx] - fd) / denom < 1e-3


class TestPersistence:
    def test_save_load_bit_exact(self, tmp_path, model):
        rng = np.random.default_rng(14)
        pts = rng.uniform(-0.4, 0.4, size=(20, 3))
        before = model.encode_identity(pts).data.copy()
        model.save(tmp_path / "m")
        loaded = Model.load(tmp_path / "m")
        after = loaded.encode_identity(pts).data
        assert np.array_equal(before, after)
        for name, p in model.parameters().items():
            assert np.array_equal(p.data, loaded.parameters()[name].data)

    def test_version_mismatch_rejected(self, tmp_path, model):
        model.save(tmp_path / "m")
        import json

        meta = json.load(open(tmp_path / "m" / "model.json"))
        meta["format_version"] = 99
        json.dump(meta, open(tmp_path / "m" / "model.json", "w"))
        with pytest.raises(VersionError):
            Model.load(tmp_path / "m")
