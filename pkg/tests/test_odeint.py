import numpy as np
import pytest

from f4d import autodiff as ad
from f4d.autodiff import Tensor
from f4d.errors import IntegrationError, InvalidInputError, NumericalError
from f4d.odeint import SolverConfig, integrate, integrate_adjoint_backward, integrate_dense, odeint

CFG = SolverConfig()  # rtol 1e-3, atol 1e-5 defaults


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(np.asarray(a) - np.asarray(b)).max() / denom


class TestIntegrate:
    def test_zero_field(self):
        y = integrate(lambda t, y: np.zeros_like(y), np.array([1.0, -2.0]), 0.0, 1.0, CFG)
        assert np.array_equal(y, [1.0, -2.0])

    def test_exponential_decay(self):
        y = integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, CFG)
        exact = np.exp(-1.0)
        assert abs(y[0] - exact) < CFG.atol + CFG.rtol * abs(exact)

    def test_harmonic_oscillator_period(self):
        f = lambda t, y: np.array([y[1], -y[0]])
        y0 = np.array([1.0, 0.0])
        y = integrate(f, y0, 0.0, 2 * np.pi, CFG)
        assert np.abs(y - y0).max() < 1e-2
        assert abs(y[0] ** 2 + y[1] ** 2 - 1.0) < 1e-2

    def test_reverse_time(self):
        y = integrate(lambda t, y: -y, np.array([1.0]), 1.0, 0.0, CFG)
        assert abs(y[0] - np.e) < 1e-2

    def test_forward_backward_round_trip(self):
        f = lambda t, y: np.array([np.sin(t) * y[0] - 0.3 * y[1], 0.2 * y[0]])
        y0 = np.array([0.7, -0.4])
        y1 = integrate(f, y0, 0.0, 1.0, CFG)
        y0b = integrate(f, y1, 1.0, 0.0, CFG)
        tol = 10 * (CFG.atol + CFG.rtol * np.abs(y0))
        assert np.all(np.abs(y0b - y0) < tol)

    def test_tightening_tolerance_reduces_error(self):
        exact = np.exp(-1.0)
        errs = []
        for k in (1.0, 0.1):
            cfg = SolverConfig(rtol=1e-3 * k, atol=1e-5 * k)
            y = integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, cfg)
            errs.append(abs(y[0] - exact))
        assert errs[1] * 2 <= errs[0]

    def test_max_steps_exceeded(self):
        cfg = SolverConfig(max_steps=3)
        with pytest.raises(IntegrationError) as ei:
            integrate(lambda t, y: np.array([np.cos(40 * t) * 40]), np.array([0.0]), 0.0, 10.0, cfg)
        assert 0.0 <= ei.value.last_t < 10.0

    def test_nan_rhs_rejected(self):
        with pytest.raises(NumericalError):
            integrate(lambda t, y: y * np.nan, np.array([1.0]), 0.0, 1.0, CFG)

    def test_rk4_fixed_method(self):
        cfg = SolverConfig(method="rk4_fixed", initial_step=1 / 64)
        y = integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, cfg)
        assert abs(y[0] - np.exp(-1.0)) < 1e-6


class TestIntegrateDense:
    def test_single_time_zero(self):
        out = integrate_dense(lambda t, y: -y, np.array([1.0]), [0.0], CFG)
        assert len(out) == 1 and out[0][0] == 1.0

    def test_exponential_samples(self):
        out = integrate_dense(lambda t, y: -y, np.array([1.0]), [0.0, 0.5, 1.0], CFG)
        expect = [1.0, np.exp(-0.5), np.exp(-1.0)]
        for got, ex in zip(out, expect):
            assert abs(got[0] - ex) < CFG.atol + CFG.rtol * ex + 1e-4

    def test_restart_equivalence(self):
        f = lambda t, y: np.array([y[1], -1.3 * y[0] - 0.1 * y[1]])
        y0 = np.array([1.0, 0.0])
        times = np.linspace(0.0, 1.0, 9)
        dense = integrate_dense(f, y0, times, CFG)
        tol = 10 * (CFG.atol + CFG.rtol)
        for tt, yd in zip(times, dense):
            yi = integrate(f, y0, 0.0, tt, CFG)
            assert np.abs(yd - yi).max() < tol

    def test_unsorted_times_rejected(self):
        with pytest.raises(InvalidInputError):
            integrate_dense(lambda t, y: -y, np.array([1.0]), [0.5, 0.2], CFG)


class MLPField(ad.Module):
    """Small smooth vector field for gradient agreement tests."""

    def __init__(self, dim, cond_dim, seed, scale=0.4):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.l1 = self.add_module("l1", ad.Linear(dim, dim, rng, scale=scale))
        self.lc = self.add_module("lc", ad.Linear(cond_dim, dim, rng, scale=scale))
        self.l2 = self.add_module("l2", ad.Linear(dim, dim, rng, scale=scale))

    def __call__(self, t, y, cond):
        h = ad.sigmoid(self.l1(y) + self.lc(cond))
        return self.l2(h)


class ScaleField(ad.Module):
    def __init__(self, a):
        super().__init__()
        self.a = self.register("a", np.array([a]))

    def __call__(self, t, y, cond):
        return y * self.a.value


class ZeroField(ad.Module):
    """Structurally zero field; its parameter never touches the output."""

    def __init__(self):
        super().__init__()
        self.unused = self.register("unused", np.array([1.0]))

    def __call__(self, t, y, cond):
        return y * 0.0


class TestAdjoint:
    def test_zero_field_passthrough(self):
        f = ZeroField()
        g = np.array([0.3, -0.7])
        d_y0, d_cond, d_params = integrate_adjoint_backward(
            f, np.array([1.0, 2.0]), np.zeros(1), 0.0, 1.0, CFG, g
        )
        assert np.allclose(d_y0, g, atol=1e-9)
        assert np.allclose(d_params["unused"], 0.0, atol=1e-9)

    def test_scalar_parameter_matches_closed_form(self):
        # y(1) = y0 * e^a, so dL/da = y0 * e^a for L = y(1).
        a, y0 = 0.7, 1.3
        f = ScaleField(a)
        d_y0, _, d_params = integrate_adjoint_backward(
            f, np.array([y0]), np.zeros(1), 0.0, 1.0, CFG, np.array([1.0])
        )
        assert rel_err(d_params["a"], np.array([y0 * np.exp(a)])) < 1e-3
        assert rel_err(d_y0, np.array([np.exp(a)])) < 1e-3

    def test_adjoint_matches_rk4_backprop(self):
        dim = 8
        func = MLPField(dim, dim, seed=3)
        rng = np.random.default_rng(4)
        y0_arr = rng.normal(size=dim)
        c_arr = rng.normal(size=dim)
        seed_vec = rng.normal(size=dim)
        times = [0.5, 1.0]

        grads = {}
        for mode, steps in (("adjoint", 0), ("rk4_graph", 64)):
            func.zero_grad()
            y0 = Tensor(y0_arr, requires_grad=True)
            cond = Tensor(c_arr, requires_grad=True)
            ys = odeint(func, y0, cond, times, CFG, mode=mode, rk4_steps=steps or 16)
            loss = ad.sum_(ys[1] * Tensor(seed_vec)) + 0.5 * ad.sum_(ys[0] * Tensor(seed_vec))
            ad.backward(loss)
            grads[mode] = (
                y0.grad.copy(),
                cond.grad.copy(),
                {k: p.grad.copy() for k, p in func.parameters().items()},
            )
        ga, gr = grads["adjoint"], grads["rk4_graph"]
        assert rel_err(ga[0], gr[0]) < 1e-3
        assert rel_err(ga[1], gr[1]) < 1e-3
        for k in ga[2]:
            assert rel_err(ga[2][k], gr[2][k]) < 1e-3, k

    def test_batched_state(self):
        func = MLPField(4, 4, seed=5)
        y0 = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        cond = Tensor(np.zeros((3, 4)))
        ys = odeint(func, y0, cond, [0.0, 1.0], CFG)
        assert ys.data.shape == (2, 3, 4)
        assert np.array_equal(ys.data[0], y0.data)
        ad.backward(ad.sum_(ys[1]))
        assert y0.grad is not None and np.all(np.isfinite(y0.grad))

    def test_first_output_at_zero_is_exact(self):
        func = MLPField(4, 4, seed=6)
        y0 = Tensor(np.ones(4))
        ys = odeint(func, y0, Tensor(np.zeros(4)), [0.0, 0.3], CFG)
        assert np.array_equal(ys.data[0], y0.data)
