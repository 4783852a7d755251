"""Built-in release gate: property suites plus a micro train-and-transfer run.

Each check row maps to one acceptance criterion (C1..C8); the training,
disentanglement, completion, and prediction rows are reduced micro
variants of the full pytest acceptance suite, sized to finish in minutes.
Results are printed as a table and written to a CSV whose bytes are
deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff import tensor as T
from .datagen import build_dataset
from .errors import ChecksumError
from .geometry import OccupancyGrid, marching_cubes, occupancy, occupancy_grid_of_mesh, volumetric_iou
from .model import Model, ModelConfig
from .odeint import SolverConfig, integrate, integrate_dense, odeint
from .tasks import OptimConfig, complete, future_observation, temporal_observation
from .training import TrainConfig, fit


def _rel(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(np.asarray(a) - np.asarray(b)).max() / denom)


def _fd_check(build, shapes, seed, h=1e-4):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    ad.backward(loss)
    worst = 0.0
    for i in range(len(arrays)):
        fd = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        fdf = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = build(*[Tensor(a) for a in arrays]).item()
            flat[j] = orig - h
            dn = build(*[Tensor(a) for a in arrays]).item()
            flat[j] = orig
            fdf[j] = (up - dn) / (2 * h)
        worst = max(worst, _rel(tensors[i].grad, fd))
    return worst


def _check_c1():
    rng = np.random.default_rng(0)
    w_err = _fd_check(
        lambda x, w, b: ad.sum_(ad.sigmoid(ad.linear(x, w, b)) * ad.relu(ad.linear(x, w, b))),
        [(4, 3), (3, 3), (3,)], seed=1,
    )
    layer = ad.CondScaleShift(2, 3, rng)
    layer.gamma_head.w.data = rng.normal(0, 0.3, size=(2, 3))
    layer.beta_head.w.data = rng.normal(0, 0.3, size=(2, 3))
    x_fix = rng.normal(size=(6, 3))
    cbn_err = _fd_check(
        lambda c: ad.sum_(layer(Tensor(x_fix), c) * layer(Tensor(x_fix), c)),
        [(6, 2)], seed=2,
    )
    y = (rng.random(10) < 0.5).astype(np.float64)
    bce_err = _fd_check(lambda z: ad.bce_with_logits(z, Tensor(y)), [(10,)], seed=3)

    e2e_err = _e2e_gradient_error()
    worst = max(w_err, cbn_err, bce_err)
    ok = worst < 1e-4 and e2e_err < 1e-3
    return ok, f"op_fd={worst:.2e} e2e_fd={e2e_err:.2e}"


def _e2e_gradient_error():
    model = Model(ModelConfig(code_dim=8, hidden=8, seq_len=3, seed=13,
                              solver=SolverConfig(rtol=1e-8, atol=1e-10)))
    rng = np.random.default_rng(13)
    model.dynamics.fc_out.w.data = rng.normal(0, 0.05, size=model.dynamics.fc_out.w.shape)
    seq = rng.uniform(-0.3, 0.3, size=(3, 16, 3))
    q_pts = rng.uniform(-0.4, 0.4, size=(16, 3))
    q_lab = (rng.random(16) < 0.5).astype(np.float64)

    def loss_value():
        c_i, c_p, c_m = model.encode(seq)
        traj = model.transform_pose(ad.reshape(c_p, (1, 8)), ad.reshape(c_m, (1, 8)),
                                    [0.0, 0.7])
        cond = Model.build_cond(c_i, traj[1][0])
        cond_rows = ad.broadcast_to(ad.reshape(cond, (1, 16)), (16, 16))
        return ad.bce_with_logits(model.decode_logits(Tensor(q_pts), cond_rows), Tensor(q_lab))

    loss = loss_value()
    ad.backward(loss)
    p = model.enc_identity.fc_in.w
    idx = (1, 2)
    analytic = p.grad[idx]
    h = 1e-5
    orig = p.data[idx]
    p.data[idx] = orig + h
    up = loss_value().item()
    p.data[idx] = orig - h
    dn = loss_value().item()
    p.data[idx] = orig
    fd = (up - dn) / (2 * h)
    return abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-10)


def _check_c2():
    cfg = SolverConfig()
    y = integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, cfg)
    e_exp = abs(y[0] - np.exp(-1.0))
    ok = e_exp < cfg.atol + cfg.rtol * np.exp(-1.0)

    f = lambda t, y: np.array([y[1], -y[0]])
    yh = integrate(f, np.array([1.0, 0.0]), 0.0, 2 * np.pi, cfg)
    ok &= np.abs(yh - [1.0, 0.0]).max() < 1e-2

    times = np.linspace(0, 1, 5)
    dense = integrate_dense(lambda t, y: -y, np.array([1.0]), times, cfg)
    for tt, yd in zip(times, dense):
        yi = integrate(lambda t, y: -y, np.array([1.0]), 0.0, tt, cfg)
        ok &= np.abs(yd - yi).max() < 10 * (cfg.atol + cfg.rtol)

    adj_err = _adjoint_vs_rk4_error(cfg)
    ok &= adj_err < 1e-3
    return bool(ok), f"exp_err={e_exp:.2e} adj_vs_rk4={adj_err:.2e}"


class _Field(ad.Module):
    def __init__(self, dim, seed):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.l1 = self.add_module("l1", ad.Linear(dim, dim, rng, scale=0.4))
        self.lc = self.add_module("lc", ad.Linear(dim, dim, rng, scale=0.4))
        self.l2 = self.add_module("l2", ad.Linear(dim, dim, rng, scale=0.4))

    def __call__(self, t, y, cond):
        return self.l2(T.sigmoid(self.l1(y) + self.lc(cond)))


def _adjoint_vs_rk4_error(cfg):
    dim = 8
    func = _Field(dim, seed=3)
    rng = np.random.default_rng(4)
    y0_arr = rng.normal(size=dim)
    c_arr = rng.normal(size=dim)
    seed_vec = rng.normal(size=dim)
    grads = {}
    for mode in ("adjoint", "rk4_graph"):
        func.zero_grad()
        y0 = Tensor(y0_arr, requires_grad=True)
        cond = Tensor(c_arr, requires_grad=True)
        ys = odeint(func, y0, cond, [1.0], cfg, mode=mode, rk4_steps=64)
        ad.backward(ad.sum_(ys[0] * Tensor(seed_vec)))
        grads[mode] = (y0.grad.copy(), cond.grad.copy(),
                       np.concatenate([p.grad.reshape(-1) for p in func.parameters().values()]))
    return max(_rel(a, b) for a, b in zip(grads["adjoint"], grads["rk4_graph"]))


def _check_c3():
    res = 48
    grid = OccupancyGrid.empty(res)
    centers = grid.centers()
    grid.values = (np.linalg.norm(centers, axis=-1) < 0.3).astype(np.float64)
    mesh = marching_cubes(grid, level=0.5)
    level_err = float(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.3).max())
    ok = level_err < 2 * grid.cell_size and mesh.is_watertight()

    res2 = 24
    grid2 = OccupancyGrid.empty(res2)
    grid2.values = (np.linalg.norm(grid2.centers(), axis=-1) < 0.3).astype(np.float64)
    mesh2 = marching_cubes(grid2, level=0.5)
    revox = occupancy_grid_of_mesh(mesh2, res2, rng=0)
    iou = volumetric_iou(grid2, revox)
    ok &= iou >= 0.95

    from .datagen.shapes import make_ellipsoid

    sphere = make_ellipsoid((0.3, 0.3, 0.3), subdivisions=4)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.5, 0.5, size=(4000, 3))
    agree = float(np.mean(occupancy(sphere, pts, rng=6)
                          == (np.linalg.norm(pts, axis=1) < 0.3)))
    ok &= agree >= 0.999
    return bool(ok), f"level_err={level_err:.4f} roundtrip_iou={iou:.3f} agree={agree:.4f}"


def _micro_pipeline(out_dir, seed):
    data_dir = os.path.join(out_dir, "micro_data")
    ds = build_dataset(data_dir, n_id=2, n_motion=2, seed=seed, L=5, n_points=64,
                       n_query=256, sigma_w=0.05, drift_scale=0.12)
    cfg = TrainConfig(lr=3e-3, batch_pairs=2, exchange_rate=0.5, steps=300,
                      eval_every=0, checkpoint_every=0, queries_per_step=256,
                      seed=seed)
    model = Model(ModelConfig(code_dim=16, hidden=16, seq_len=ds.L, seed=seed,
                              scale=ds.scale, translation=tuple(ds.translation)))
    state = fit(ds, cfg, model=model, out_dir=os.path.join(out_dir, "micro_train"))
    return ds, state


def _grid_iou(model, ds, i, m, t, res=20):
    grid = OccupancyGrid.empty(res)
    pts = grid.centers().reshape(-1, 3)
    gt = ds.ground_truth_occupancy(i, m, t, pts, rng=0)
    s = ds.load(i, m)
    with T.no_grad():
        c_i, c_p, c_m = model.encode(s.inputs)
        traj = model.transform_pose(ad.reshape(c_p, (1, -1)), ad.reshape(c_m, (1, -1)), [max(t, 0.0)])
    probs = model.decode_occupancy(pts, c_i.data, traj.data[0, 0])
    return volumetric_iou(probs >= 0.4, gt)


def _transfer_iou(model, ds, res=20):
    s1, s2 = ds.load(0, 0), ds.load(1, 1)
    from .tasks import transfer_codes

    c_i, c_p, c_m = transfer_codes(model, s2.inputs, s1.inputs)
    t = s1.tau
    grid = OccupancyGrid.empty(res)
    pts = grid.centers().reshape(-1, 3)
    gt = ds.ground_truth_occupancy(1, 0, t, pts, rng=0)
    with T.no_grad():
        traj = model.transform_pose(Tensor(c_p.reshape(1, -1)), Tensor(c_m.reshape(1, -1)), [t])
    probs = model.decode_occupancy(pts, c_i, traj.data[0, 0])
    return volumetric_iou(probs >= 0.4, gt)


def run_selftest(out_dir, seed=0):
    """Run all checks; returns (rows, all_pass) and writes a CSV report."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []

    def add(cid, name, ok, detail):
        rows.append((cid, name, "pass" if ok else "FAIL", detail))

    ok, detail = _check_c1()
    add("C1", "gradient-suite", ok, detail)
    ok, detail = _check_c2()
    add("C2", "ode-suite", ok, detail)
    ok, detail = _check_c3()
    add("C3", "geometry-suite", ok, detail)

    ds, state = _micro_pipeline(out_dir, seed)
    model = state.model

    ious = [_grid_iou(model, ds, i, m, ds.load(i, m).tau) for i, m in ds.keys("train")]
    micro_iou = float(np.mean(ious))
    s0 = ds.load(0, 0)
    with T.no_grad():
        _, c_p, c_m = model.encode(s0.inputs)
        traj0 = model.transform_pose(ad.reshape(c_p, (1, -1)), ad.reshape(c_m, (1, -1)), [0.0])
    t0_exact = bool(np.array_equal(traj0.data[0, 0], c_p.data))
    add("C4", "overfit-micro", micro_iou >= 0.55 and t0_exact,
        f"train_iou={micro_iou:.3f} t0_identity={t0_exact}")

    tr_iou = _transfer_iou(model, ds)
    add("C5", "transfer-micro", tr_iou >= 0.4, f"transfer_iou={tr_iou:.3f}")

    obs = temporal_observation(ds, 0, 0, n_frames=6, n_query=128, seed=seed)
    codes, _, info = complete(model, obs, OptimConfig(iterations=40, halve_every=20),
                              seed=seed, make_meshes=False)
    c6_ok = info["losses"][-1] < info["losses"][0] and not info["warning"]
    add("C6", "completion-micro", c6_ok,
        f"loss {info['losses'][0]:.3f}->{info['losses'][-1]:.3f}")

    fobs = future_observation(ds, 0, 0, n_frames=8, n_observed=4, n_query=128, seed=seed)
    fcodes, _, finfo = predict_future_codes(model, fobs, seed)
    future_t = fobs.withheld_times
    probs = _future_probe(model, fcodes, future_t)
    add("C7", "prediction-micro", bool(np.all(np.isfinite(probs))),
        f"extrapolated_frames={len(future_t)}")

    det_ok = _determinism_check(ds, seed)
    crc_ok = _crc_check(out_dir, model)
    add("C8", "determinism+crc", det_ok and crc_ok, f"replay={det_ok} crc_reject={crc_ok}")

    all_pass = all(r[2] == "pass" for r in rows)
    with open(os.path.join(out_dir, "selftest_metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["criterion", "name", "status", "detail"])
        w.writerows(rows)
    return rows, all_pass


def predict_future_codes(model, obs, seed):
    from .tasks import predict_future

    return predict_future(model, obs, OptimConfig(iterations=30, halve_every=15),
                          future_times=obs.withheld_times, seed=seed, make_meshes=False)


def _future_probe(model, codes, future_times):
    with T.no_grad():
        traj = model.transform_pose(
            Tensor(codes["pose"].reshape(1, -1)), Tensor(codes["motion"].reshape(1, -1)),
            sorted(future_times),
        )
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 0.5, size=(64, 3))
    return np.concatenate([
        model.decode_occupancy(pts, codes["identity"], traj.data[k, 0])
        for k in range(len(future_times))
    ])


def _determinism_check(ds, seed):
    def run():
        cfg = TrainConfig(lr=3e-3, batch_pairs=1, exchange_rate=0.5, steps=5,
                          eval_every=0, checkpoint_every=0, queries_per_step=64,
                          seed=seed + 1)
        model = Model(ModelConfig(code_dim=16, hidden=16, seq_len=ds.L, seed=seed + 1))
        state = fit(ds, cfg, model=model)
        return [row[:3] for row in state.history]

    return run() == run()


def _crc_check(out_dir, model):
    path = os.path.join(out_dir, "crc_probe.f4dw")
    ad.save_arrays(path, {"w": np.arange(16.0)})
    blob = bytearray(open(path, "rb").read())
    blob[12] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    try:
        ad.load_arrays(path)
        return False
    except ChecksumError:
        return True


def format_table(rows):
    lines = [f"{'id':<4} {'check':<20} {'status':<7} detail"]
    for cid, name, status, detail in rows:
        lines.append(f"{cid:<4} {name:<20} {status:<7} {detail}")
    return "\n".join(lines)
