import numpy as np
import pytest

from f4d import autodiff as ad
from f4d.autodiff import Tensor
from f4d.errors import InvalidInputError, ShapeError


def finite_diff(f, x, h=1e-4):
    """Central finite differences of a scalar-valued f at x (flattened)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def check_grad(build, shapes, seed, tol=1e-4):
    """Compare analytic grads of scalar build(*tensors) against central FD."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    ad.backward(loss)
    for i, t in enumerate(tensors):
        def f(x, i=i):
            vals = [Tensor(a) for a in arrays]
            vals[i] = Tensor(x)
            return build(*vals).item()
        fd = finite_diff(f, arrays[i].copy())
        assert t.grad is not None
        assert rel_err(t.grad, fd) < tol, f"input {i}: grad mismatch {rel_err(t.grad, fd)}"


class TestLinear:
    def test_identity_map(self):
        x = Tensor([[1.0, 0.0]])
        w = Tensor(np.eye(2))
        b = Tensor(np.zeros(2))
        y = ad.linear(x, w, b)
        assert np.allclose(y.data, [[1.0, 0.0]])

    def test_scalar_affine(self):
        y = ad.linear(Tensor([[2.0]]), Tensor([[3.0]]), Tensor([1.0]))
        assert np.allclose(y.data, [[7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.linear(Tensor(np.ones((4, 3))), Tensor(np.ones((2, 5))), Tensor(np.zeros(5)))

    def test_grad_matches_fd(self):
        check_grad(
            lambda x, w, b: ad.sum_(ad.linear(x, w, b) * ad.linear(x, w, b)),
            [(5, 3), (3, 4), (4,)],
            seed=0,
        )


class TestElementwise:
    def test_relu(self):
        y = ad.relu(Tensor([-1.0, 2.0]))
        assert np.allclose(y.data, [0.0, 2.0])

    def test_relu_subgradient_zero(self):
        x = Tensor([0.0], requires_grad=True)
        ad.backward(ad.sum_(ad.relu(x)))
        assert x.grad[0] == 0.0

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)

    def test_sigmoid_extremes_finite(self):
        y = ad.sigmoid(Tensor([500.0, -500.0]))
        assert np.all(np.isfinite(y.data))
        assert y.data[0] == pytest.approx(1.0)
        assert y.data[1] == pytest.approx(0.0)

    @pytest.mark.parametrize("seed", [1, 2])
    def test_grads(self, seed):
        check_grad(lambda x: ad.sum_(ad.sigmoid(x) * ad.relu(x + 0.3)), [(4, 3)], seed=seed)

    def test_div_sqrt_exp_log_grads(self):
        check_grad(
            lambda a, b: ad.sum_(ad.exp(a * 0.3) / ad.sqrt(b * b + 1.0) + ad.log(b * b + 0.5)),
            [(6,), (6,)],
            seed=3,
        )


class TestReductionsAndShape:
    def test_max_reduce_permutation_invariant(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(50, 8))
        perm = rng.permutation(50)
        a = ad.max_reduce(Tensor(pts), axis=0)
        b = ad.max_reduce(Tensor(pts[perm]), axis=0)
        assert np.array_equal(a.data, b.data)

    def test_max_reduce_first_index_ties(self):
        x = Tensor(np.array([[1.0, 5.0, 5.0, 2.0]]), requires_grad=True)
        ad.backward(ad.sum_(ad.max_reduce(x, axis=1)))
        assert np.array_equal(x.grad, [[0.0, 1.0, 0.0, 0.0]])

    def test_max_reduce_invalid_axis(self):
        with pytest.raises(ShapeError):
            ad.max_reduce(Tensor(np.ones((2, 2))), axis=5)

    def test_concat_and_split_grads(self):
        check_grad(
            lambda a, b: ad.sum_(ad.concat([a, b], axis=1) * ad.concat([b, a], axis=1)),
            [(3, 2), (3, 2)],
            seed=4,
        )

    def test_getitem_broadcast_reshape_grads(self):
        def build(x):
            y = ad.broadcast_to(ad.reshape(x, (1, 6)), (4, 6))
            return ad.sum_(y[1:3] * y[1:3]) + ad.mean(y)
        check_grad(build, [(6,)], seed=5)

    def test_mean_axis_grads(self):
        check_grad(lambda x: ad.sum_(ad.mean(x, axis=0) * ad.mean(x, axis=0)), [(5, 3)], seed=6)


class TestCondScaleShift:
    def _layer(self, cond_dim, channels, seed=0, random_heads=True):
        rng = np.random.default_rng(seed)
        layer = ad.CondScaleShift(cond_dim, channels, rng)
        if random_heads:
            layer.gamma_head.w.data = rng.normal(0, 0.3, size=layer.gamma_head.w.shape)
            layer.beta_head.w.data = rng.normal(0, 0.3, size=layer.beta_head.w.shape)
        return layer

    def test_identity_on_normalized_input(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(200, 4))
        x = (x - x.mean(0)) / x.std(0)
        layer = self._layer(3, 4, random_heads=False)
        out = layer(Tensor(x), Tensor(np.zeros((200, 3))))
        assert np.allclose(out.data, x, atol=1e-4)

    def test_output_mean_is_beta(self):
        rng = np.random.default_rng(2)
        layer = self._layer(3, 4, seed=2)
        cond = np.tile(rng.normal(size=3), (128, 1))
        x = rng.normal(2.0, 3.0, size=(128, 4))
        out = layer(Tensor(x), Tensor(cond))
        beta = layer.beta_head(Tensor(cond)).data
        assert np.allclose(out.data.mean(axis=0), beta[0], atol=1e-5)

    def test_grad_wrt_cond_matches_fd(self):
        layer = self._layer(3, 4, seed=3)
        rng = np.random.default_rng(3)
        x_arr = rng.normal(size=(12, 4))
        cond_arr = rng.normal(size=(12, 3))
        cond = Tensor(cond_arr, requires_grad=True)
        out = layer(Tensor(x_arr), cond)
        loss = ad.sum_(out * out)
        ad.backward(loss)

        def f(c):
            out = layer(Tensor(x_arr), Tensor(c))
            return ad.sum_(out * out).item()

        fd = finite_diff(f, cond_arr.copy())
        assert rel_err(cond.grad, fd) < 1e-4

    def test_grad_wrt_x_matches_fd(self):
        layer = self._layer(2, 3, seed=4)
        rng = np.random.default_rng(4)
        cond_arr = rng.normal(size=(10, 2))

        def build(x):
            out = layer(x, Tensor(cond_arr))
            return ad.sum_(out * out)

        check_grad(build, [(10, 3)], seed=4)

    def test_empty_batch_rejected(self):
        layer = self._layer(2, 3)
        with pytest.raises(ShapeError):
            layer(Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 2))))


class TestBce:
    def test_logit_zero_target_one(self):
        loss = ad.bce_with_logits(Tensor([0.0]), Tensor([1.0]))
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-9)

    def test_saturated_logit_no_overflow(self):
        loss = ad.bce_with_logits(Tensor([50.0]), Tensor([1.0]))
        assert loss.item() < 1e-10

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        z = rng.normal(0, 3, size=100)
        y = (rng.random(100) < 0.5).astype(np.float64)
        loss = ad.bce_with_logits(Tensor(z), Tensor(y)).item()
        p = 1.0 / (1.0 + np.exp(-z))
        direct = np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
        assert abs(loss - direct) / abs(direct) < 1e-6

    def test_invalid_target(self):
        with pytest.raises(InvalidInputError):
            ad.bce_with_logits(Tensor([0.0]), Tensor([0.5]))

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(8)
        y = (rng.random(20) < 0.5).astype(np.float64)
        check_grad(lambda z: ad.bce_with_logits(z, Tensor(y)), [(20,)], seed=8)


class TestBackward:
    def test_quadratic_grad(self):
        x = Tensor([3.0, -1.0], requires_grad=True)
        ad.backward(ad.sum_(x * x) * 0.5)
        assert np.allclose(x.grad, [3.0, -1.0])

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(InvalidInputError):
            ad.backward(x * 2.0)

    def test_detached_gets_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0])
        ad.backward(ad.sum_(x * y))
        assert y.grad is None
        assert x.grad is not None

    def test_deterministic_bit_identical(self):
        def run():
            rng = np.random.default_rng(9)
            x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            h = ad.relu(ad.matmul(x, w))
            loss = ad.mean(ad.sigmoid(h) * h) + ad.sum_(ad.max_reduce(h, axis=0))
            ad.backward(loss)
            return x.grad.copy(), w.grad.copy()
        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0])
        assert np.array_equal(g1[1], g2[1])

    def test_grad_accumulates_on_reuse(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x * 3.0
        ad.backward(ad.sum_(y))
        assert np.allclose(x.grad, [7.0])

    def test_no_grad_suppresses_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y._parents == ()


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = ad.Parameter(np.array([1.0]))
        loss = ad.sum_(p.value * p.value)
        ad.backward(loss)
        ad.adam_step({"w": p}, lr=0.1)
        assert p.data[0] == pytest.approx(0.9, abs=1e-6)
        assert p.grad is None

    def test_converges_on_quadratic(self):
        p = ad.Parameter(np.array([5.0, -3.0]))
        opt = ad.Adam([p], lr=0.3)
        for _ in range(300):
            loss = ad.sum_(p.value * p.value)
            ad.backward(loss)
            opt.step()
        assert np.abs(p.data).max() < 1e-2

    def test_hand_traced_two_steps(self):
        # f(w) = w^2 from w=1, lr=0.1: replay the update equations directly.
        p = ad.Parameter(np.array([1.0]))
        opt = ad.Adam([p], lr=0.1)
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 3):
            ad.backward(ad.sum_(p.value * p.value))
            opt.step()
            g = 2.0 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.9 ** t)
            vhat = v / (1 - 0.999 ** t)
            w = w - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
            assert p.data[0] == pytest.approx(w, rel=1e-12)


class TestSerialize:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        arrays = {
            "enc.w": rng.normal(size=(4, 3)),
            "enc.b": rng.normal(size=3),
            "scalar": np.array(2.5),
        }
        path = tmp_path / "weights.f4dw"
        ad.save_arrays(path, arrays)
        loaded = ad.load_arrays(path)
        assert set(loaded) == set(arrays)
        for k in arrays:
            assert np.array_equal(loaded[k], np.asarray(arrays[k], dtype=np.float64))

    def test_corrupt_byte_rejected(self, tmp_path):
        path = tmp_path / "weights.f4dw"
        ad.save_arrays(path, {"w": np.arange(8.0)})
        blob = bytearray(path.read_bytes())
        blob[20] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(Exception) as ei:
            ad.load_arrays(path)
        assert "CRC" in str(ei.value) or "magic" in str(ei.value)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "weights.f4dw"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(Exception):
            ad.load_arrays(path)
