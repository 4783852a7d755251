"""Identity-exchange training.

Each step draws pairs of sequences from different identities, encodes
them, and with the configured probability swaps the identity codes within
a pair; the supervision labels are swapped correspondingly (the dataset
materializes every identity x motion combination, so exact cross labels
always exist). Both branches supervise decoded occupancy at t=0 and at
the sample's stored query time.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from ..errors import InvalidInputError, TrainingDiverged
from ..geometry import OccupancyGrid
from ..model import Model, ModelConfig

METRICS_HEADER = ("step", "loss_t0", "loss_tau", "eval_iou")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_pairs: int = 4
    exchange_rate: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    steps: int = 20000
    eval_every: int = 250
    checkpoint_every: int = 2000
    queries_per_step: int = 2048
    eval_grid_res: int = 24
    seed: int = 0
    ode_mode: str = "adjoint"

    def __post_init__(self):
        if not 0.0 <= self.exchange_rate <= 1.0:
            raise InvalidInputError("exchange_rate must lie in [0, 1]")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidInputError("loss weights must be >= 0")


@dataclass
class TrainState:
    model: Model
    optimizer: ad.Adam
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)


@dataclass
class _Supervision:
    """One decode target: codes (graph tensors) plus the supervising sample."""

    c_i: object
    c_p: object
    c_m: object
    sample: object


def loss_for_sample(model, sample, c_i, c_p, c_m, lambda1=1.0, lambda2=1.0,
                    mode="adjoint", queries_per_step=None, rng=None):
    """Occupancy loss of one sample under the given (possibly swapped) codes."""
    sup = _Supervision(ad.reshape(c_i, (1, -1)), ad.reshape(c_p, (1, -1)),
                       ad.reshape(c_m, (1, -1)), sample)
    total, l0, lt = _batch_loss(model, [sup], lambda1, lambda2, mode,
                                queries_per_step, rng)
    return total


def _batch_loss(model, sups, lambda1, lambda2, mode, queries_per_step=None, rng=None):
    """Joint loss of a list of supervisions in a single tape."""
    d = model.cfg.code_dim
    n_e = len(sups)
    c_i = T.concat([s.c_i for s in sups], axis=0)
    c_p = T.concat([s.c_p for s in sups], axis=0)
    c_m = T.concat([s.c_m for s in sups], axis=0)

    taus = [s.sample.tau for s in sups]
    times = sorted(set(taus))
    traj = model.transform_pose(c_p, c_m, times, mode=mode)
    t_index = np.array([times.index(t) for t in taus])
    c_pt = traj[t_index, np.arange(n_e)]

    def pick(points, labels):
        if queries_per_step is None or queries_per_step >= len(points):
            return points, labels
        idx = rng.choice(len(points), size=queries_per_step, replace=False)
        return points[idx], labels[idx]

    pts0, lab0, ptst, labt = [], [], [], []
    for s in sups:
        p, l = pick(s.sample.q0_points, s.sample.q0_labels)
        pts0.append(p)
        lab0.append(l)
        p, l = pick(s.sample.qtau_points, s.sample.qtau_labels)
        ptst.append(p)
        labt.append(l)
    q = len(pts0[0])

    cond0 = Model.expand_cond(T.concat([c_i, c_p], axis=1), q)
    condt = Model.expand_cond(T.concat([c_i, c_pt], axis=1), q)
    points = Tensor(np.concatenate(pts0 + ptst))
    cond = T.concat([cond0, condt], axis=0)
    logits = model.decode_logits(points, cond)

    n0 = n_e * q
    loss0 = ad.bce_with_logits(logits[:n0], Tensor(np.concatenate(lab0)))
    losst = ad.bce_with_logits(logits[n0:], Tensor(np.concatenate(labt)))
    total = loss0 * lambda1 + losst * lambda2
    return total, loss0, losst


def encode_pair(model, s1, s2):
    """Batched codes for a pair of samples: ([2, D] each of c_i, c_p, c_m)."""
    seqs = np.stack([s1.inputs, s2.inputs])
    return model.encode(seqs)


def pair_supervisions(model, dataset, s1, s2, swap):
    """Supervision list for one (possibly identity-swapped) pair."""
    c_i, c_p, c_m = encode_pair(model, s1, s2)
    row = lambda t, i: ad.reshape(t[i], (1, -1))
    if not swap:
        return [
            _Supervision(row(c_i, 0), row(c_p, 0), row(c_m, 0), s1),
            _Supervision(row(c_i, 1), row(c_p, 1), row(c_m, 1), s2),
        ]
    cross_1 = dataset.load(s2.identity_id, s1.motion_id)
    cross_2 = dataset.load(s1.identity_id, s2.motion_id)
    return [
        _Supervision(row(c_i, 1), row(c_p, 0), row(c_m, 0), cross_1),
        _Supervision(row(c_i, 0), row(c_p, 1), row(c_m, 1), cross_2),
    ]


def train_step_pair(model, optimizer, dataset, s1, s2, swap, cfg, rng=None):
    """Encode a pair, build the (swapped) losses, apply one Adam step."""
    sups = pair_supervisions(model, dataset, s1, s2, swap)
    total, l0, lt = _batch_loss(
        model, sups, cfg.lambda1, cfg.lambda2, cfg.ode_mode,
        cfg.queries_per_step, rng,
    )
    if not np.isfinite(total.item()):
        raise TrainingDiverged("non-finite loss in train_step_pair")
    model.zero_grad()
    ad.backward(total)
    optimizer.step()
    return total.item(), l0.item(), lt.item()


class _SampleCache:
    def __init__(self, dataset):
        self.dataset = dataset
        self._cache = {}

    def load(self, i, m):
        key = (i, m)
        if key not in self._cache:
            self._cache[key] = self.dataset.load(i, m)
        return self._cache[key]


def _grid_eval_iou(model, dataset, cache, key, res, label_cache):
    """IoU of decoded occupancy vs ground truth on a coarse eval lattice."""
    sample = cache.load(*key)
    t = sample.tau
    grid = OccupancyGrid.empty(res)
    pts = grid.centers().reshape(-1, 3)
    ck = (key, t, res)
    if ck not in label_cache:
        label_cache[ck] = dataset.ground_truth_occupancy(key[0], key[1], t, pts, rng=0)
    gt = label_cache[ck]
    with T.no_grad():
        c_i, c_p, c_m = model.encode(sample.inputs)
        traj = model.transform_pose(
            ad.reshape(c_p, (1, -1)), ad.reshape(c_m, (1, -1)), [t]
        )
    probs = model.decode_occupancy(pts, c_i.data, traj.data[0, 0])
    from ..geometry import volumetric_iou

    return volumetric_iou(probs >= 0.4, gt)


def fit(dataset, cfg, model=None, model_cfg=None, out_dir=None, resume=None,
        on_step=None):
    """Run identity-exchange training over the dataset's train split.

    Returns the final TrainState. Writes metrics.csv and periodic
    checkpoints under out_dir when given. ``resume`` restores a checkpoint
    directory bit-exactly (model, optimizer moments, RNG stream, step).
    """
    train_keys = dataset.keys("train")
    ids = sorted({i for i, _ in train_keys})
    if len(ids) < 2 or len({m for _, m in train_keys}) < 2:
        raise InvalidInputError("training needs >= 2 identities and >= 2 motions")

    if resume is not None:
        state = load_checkpoint(resume, lr=cfg.lr)
    else:
        if model is None:
            model_cfg = model_cfg or ModelConfig(seed=cfg.seed)
            model_cfg.seq_len = dataset.L
            model_cfg.scale = dataset.scale
            model_cfg.translation = tuple(dataset.translation)
            model = Model(model_cfg)
        optimizer = ad.Adam(model.parameters(), lr=cfg.lr)
        state = TrainState(model=model, optimizer=optimizer,
                           rng=np.random.default_rng(cfg.seed))

    cache = _SampleCache(dataset)
    label_cache = {}
    by_other_id = {
        i: [k for k in train_keys if k[0] != i] for i in ids
    }

    metrics_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        if not os.path.exists(metrics_path):
            with open(metrics_path, "w", newline="") as f:
                csv.writer(f).writerow(METRICS_HEADER)

    model, optimizer, rng = state.model, state.optimizer, state.rng
    while state.step < cfg.steps:
        state.step += 1
        sups = []
        for _ in range(cfg.batch_pairs):
            k1 = train_keys[rng.integers(len(train_keys))]
            others = by_other_id[k1[0]]
            k2 = others[rng.integers(len(others))]
            swap = bool(rng.random() < cfg.exchange_rate)
            s1, s2 = cache.load(*k1), cache.load(*k2)
            sups.extend(pair_supervisions(model, dataset, s1, s2, swap))
        total, l0, lt = _batch_loss(
            model, sups, cfg.lambda1, cfg.lambda2, cfg.ode_mode,
            cfg.queries_per_step, rng,
        )
        if not np.isfinite(total.item()):
            ckpt = None
            if out_dir is not None:
                ckpt = os.path.join(out_dir, f"ckpt_diverged_{state.step}")
                save_checkpoint(state, ckpt)
            raise TrainingDiverged(f"non-finite loss at step {state.step}", checkpoint=ckpt)
        model.zero_grad()
        ad.backward(total)
        optimizer.step()

        eval_iou = ""
        if cfg.eval_every and state.step % cfg.eval_every == 0:
            eval_iou = _grid_eval_iou(model, dataset, cache, train_keys[0],
                                      cfg.eval_grid_res, label_cache)
        row = (state.step, l0.item(), lt.item(), eval_iou)
        state.history.append(row)
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as f:
                csv.writer(f).writerow(row)
        if out_dir is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(state, os.path.join(out_dir, f"ckpt_{state.step:06d}"))
        if on_step is not None:
            on_step(state, row)

    if out_dir is not None:
        save_checkpoint(state, os.path.join(out_dir, "ckpt_final"))
    return state


def save_checkpoint(state, ckpt_dir):
    os.makedirs(ckpt_dir, exist_ok=True)
    state.model.save(os.path.join(ckpt_dir, "model"))
    ad.save_arrays(os.path.join(ckpt_dir, "optim.f4dw"), state.optimizer.state_arrays())
    with open(os.path.join(ckpt_dir, "state.json"), "w") as f:
        json.dump(
            {"step": state.step, "rng_state": state.rng.bit_generator.state},
            f, indent=1, sort_keys=True,
        )


def load_checkpoint(ckpt_dir, lr):
    model = Model.load(os.path.join(ckpt_dir, "model"))
    optimizer = ad.Adam(model.parameters(), lr=lr)
    optim_path = os.path.join(ckpt_dir, "optim.f4dw")
    if os.path.exists(optim_path):
        optimizer.load_state_arrays(ad.load_arrays(optim_path))
    with open(os.path.join(ckpt_dir, "state.json")) as f:
        meta = json.load(f)
    rng = np.random.default_rng(0)
    st = meta["rng_state"]
    if "state" in st and isinstance(st["state"], dict):
        st["state"] = {k: int(v) for k, v in st["state"].items()}
    rng.bit_generator.state = st
    return TrainState(model=model, optimizer=optimizer, rng=rng, step=int(meta["step"]))
