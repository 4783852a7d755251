"""Command-line interface for the full pipeline.

Commands: gen-data, train, reconstruct, transfer, complete, predict, eval,
selftest. Every command honors --seed, --config, --profile, and --set
key=value overrides (precedence: defaults < profile < config file < --set).

Exit codes: 0 ok, 1 selftest failure, 2 usage error, 3 I/O error,
4 version/checksum mismatch. Set F4D_LOG={error|info|debug} for verbosity.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .datagen import Dataset, build_dataset
from .errors import ChecksumError, InvalidInputError, VersionError
from .geometry import read_off, write_off
from .model import Model
from .training import fit

log = logging.getLogger("f4d")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="JSON config file (flat dotted keys)")
    p.add_argument("--profile", choices=sorted(cfgmod.PROFILES), default=None)
    p.add_argument("--set", dest="sets", action="append", default=[],
                   metavar="KEY=VALUE", help="config override (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="f4d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a warping-shapes dataset")
    _add_common(p)
    p.add_argument("--ids", type=int, required=True)
    p.add_argument("--motions", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-w", type=float, default=None)
    p.add_argument("--drift", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("train", help="run identity-exchange training")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint directory")

    p = sub.add_parser("reconstruct", help="reconstruct a sequence to meshes")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--motion", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--times", type=int, default=17)
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)

    p = sub.add_parser("transfer", help="motion transfer between two sequences")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--identity-from", required=True, metavar="ID,MOTION")
    p.add_argument("--motion-from", required=True, metavar="ID,MOTION")
    p.add_argument("--keep-initial-pose", action="store_true",
                   help="keep the identity sequence's initial pose code")
    p.add_argument("--out", required=True)
    p.add_argument("--times", type=int, default=17)
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)

    p = sub.add_parser("complete", help="latent-code completion of a partial capture")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--motion", type=int, required=True)
    p.add_argument("--mode", choices=["temporal", "spatial"], default="temporal")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--queries-per-frame", type=int, default=1024)

    p = sub.add_parser("predict", help="future prediction from a truncated capture")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--motion", type=int, required=True)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--observed", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-res", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--queries-per-frame", type=int, default=1024)

    p = sub.add_parser("eval", help="IoU/chamfer of predicted meshes vs ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="directory of OFF meshes")
    p.add_argument("--gt", required=True,
                   help="directory of OFF meshes, or a dataset directory")
    p.add_argument("--id", type=int, default=None)
    p.add_argument("--motion", type=int, default=None)
    p.add_argument("--times", type=int, default=None,
                   help="frame count when --gt is a dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="run the built-in verification suite")
    _add_common(p)
    p.add_argument("--out", required=True)

    return parser


def _load_model(path):
    model = Model.load(path)
    log.info("loaded model from %s (code_dim=%d hidden=%d)",
             path, model.cfg.code_dim, model.cfg.hidden)
    return model


def _sorted_meshes(dir_path):
    files = sorted(glob.glob(os.path.join(dir_path, "*.off")))
    if not files:
        raise InvalidInputError(f"{dir_path}: no .off meshes found")
    return [read_off(f) for f in files]


def _write_meshes(meshes, out_dir, prefix="frame"):
    os.makedirs(out_dir, exist_ok=True)
    for k, mesh in enumerate(meshes):
        write_off(mesh, os.path.join(out_dir, f"{prefix}_{k:04d}.off"))


def cmd_gen_data(args, cfg):
    sigma_w = args.sigma_w if args.sigma_w is not None else cfg["data.sigma_w"]
    drift = args.drift if args.drift is not None else cfg["data.drift_scale"]
    build_dataset(
        args.out, n_id=args.ids, n_motion=args.motions, seed=args.seed,
        L=int(cfg["data.L"]), n_points=int(cfg["data.n_points"]),
        n_query=int(cfg["data.n_query"]), sigma_w=sigma_w, drift_scale=drift,
        sigma_near=cfg["data.sigma_near"], bounding=cfg["data.bounding_volume"],
        n_test_motions=cfg["data.test_motions"], n_unseen_ids=cfg["data.unseen_ids"],
        jobs=args.jobs,
    )
    log.info("dataset written to %s", args.out)
    return 0


def cmd_train(args, cfg):
    ds = Dataset(args.data)
    tc = cfgmod.train_config(cfg, args.seed)
    model = None
    if args.resume is None:
        mc = cfgmod.model_config(cfg, ds.L, args.seed, ds.scale, tuple(ds.translation))
        model = Model(mc)
    fit(ds, tc, model=model, out_dir=args.out, resume=args.resume)
    return 0


def _times_list(n):
    return [float(t) for t in np.linspace(0.0, 1.0, n)]


def cmd_reconstruct(args, cfg):
    from .tasks import reconstruct_sequence

    model = _load_model(args.model)
    ds = Dataset(args.data)
    s = ds.load(args.id, args.motion)
    meshes = reconstruct_sequence(
        model, s.inputs, _times_list(args.times),
        grid_res=args.grid_res or int(cfg["eval.grid_res"]),
        threshold=args.threshold or cfg["eval.threshold"],
    )
    _write_meshes(meshes, args.out)
    return 0


def _parse_key(text):
    try:
        i, m = text.split(",")
        return int(i), int(m)
    except ValueError as e:
        raise InvalidInputError(f"expected ID,MOTION pair, got {text!r}") from e


def cmd_transfer(args, cfg):
    from .tasks import transfer_motion, transfer_motion_keep_pose

    model = _load_model(args.model)
    ds = Dataset(args.data)
    ki = _parse_key(args.identity_from)
    km = _parse_key(args.motion_from)
    s_id = ds.load(*ki)
    s_mo = ds.load(*km)
    fn = transfer_motion_keep_pose if args.keep_initial_pose else transfer_motion
    meshes = fn(
        model, s_id.inputs, s_mo.inputs, _times_list(args.times),
        grid_res=args.grid_res or int(cfg["eval.grid_res"]),
        threshold=args.threshold or cfg["eval.threshold"],
    )
    _write_meshes(meshes, args.out)
    return 0


def cmd_complete(args, cfg):
    from .tasks import complete, evaluate, metrics_to_csv, spatial_observation, temporal_observation

    model = _load_model(args.model)
    ds = Dataset(args.data)
    oc = cfgmod.optim_config(cfg)
    builder = temporal_observation if args.mode == "temporal" else spatial_observation
    obs = builder(ds, args.id, args.motion, n_frames=args.frames,
                  n_query=args.queries_per_frame, sigma_near=cfg["data.sigma_near"],
                  seed=args.seed)
    all_times = sorted(set(obs.observed_times) | set(obs.withheld_times))
    codes, meshes, info = complete(
        model, obs, oc, seed=args.seed, times_out=all_times,
        grid_res=args.grid_res or int(cfg["eval.grid_res"]),
        threshold=args.threshold or cfg["eval.threshold"],
    )
    os.makedirs(args.out, exist_ok=True)
    _write_meshes(meshes, args.out)
    gt = [ds.ground_truth_mesh(args.id, args.motion, t) for t in all_times]
    rows, mean = evaluate(meshes, gt, times=all_times,
                          n_iou_points=int(cfg["eval.n_iou_points"]),
                          n_surface_points=int(cfg["eval.n_surface_points"]),
                          seed=args.seed, sequence=f"{args.id}_{args.motion}")
    withheld = set(obs.withheld_times)
    for r in rows:
        r["withheld"] = int(r["t"] in withheld)
    metrics_to_csv(rows, mean, os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "completion.json"), "w") as f:
        json.dump({"best_loss": info["best_loss"], "warning": info["warning"],
                   "codes": {k: v.tolist() for k, v in codes.items()}}, f, indent=1)
    return 0


def cmd_predict(args, cfg):
    from .tasks import evaluate, future_observation, metrics_to_csv, predict_future

    model = _load_model(args.model)
    ds = Dataset(args.data)
    oc = cfgmod.optim_config(cfg)
    obs = future_observation(ds, args.id, args.motion, n_frames=args.frames,
                             n_observed=args.observed,
                             n_query=args.queries_per_frame,
                             sigma_near=cfg["data.sigma_near"], seed=args.seed)
    codes, meshes, info = predict_future(
        model, obs, oc, future_times=obs.withheld_times, seed=args.seed,
        grid_res=args.grid_res or int(cfg["eval.grid_res"]),
        threshold=args.threshold or cfg["eval.threshold"],
    )
    _write_meshes(meshes, args.out)
    gt = [ds.ground_truth_mesh(args.id, args.motion, t) for t in obs.withheld_times]
    rows, mean = evaluate(meshes, gt, times=obs.withheld_times,
                          n_iou_points=int(cfg["eval.n_iou_points"]),
                          n_surface_points=int(cfg["eval.n_surface_points"]),
                          seed=args.seed, sequence=f"{args.id}_{args.motion}")
    metrics_to_csv(rows, mean, os.path.join(args.out, "metrics.csv"))
    return 0


def cmd_eval(args, cfg):
    from .tasks import evaluate, metrics_to_csv

    pred = _sorted_meshes(args.pred)
    if os.path.exists(os.path.join(args.gt, "manifest.json")):
        if args.id is None or args.motion is None:
            raise InvalidInputError("--id and --motion required with a dataset --gt")
        ds = Dataset(args.gt)
        times = _times_list(args.times or len(pred))
        gt = [ds.ground_truth_mesh(args.id, args.motion, t) for t in times]
    else:
        gt = _sorted_meshes(args.gt)
        times = list(range(len(gt)))
    rows, mean = evaluate(pred, gt, times=times,
                          n_iou_points=int(cfg["eval.n_iou_points"]),
                          n_surface_points=int(cfg["eval.n_surface_points"]),
                          seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    metrics_to_csv(rows, mean, os.path.join(args.out, "metrics.csv"))
    print(f"mean IoU {mean['iou']:.4f}  mean chamfer {mean['chamfer']:.5f}  "
          f"failures {mean['failures']}")
    return 0


def cmd_selftest(args, cfg):
    from .selftest import format_table, run_selftest

    rows, all_pass = run_selftest(args.out, seed=args.seed)
    print(format_table(rows))
    return 0 if all_pass else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "transfer": cmd_transfer,
    "complete": cmd_complete,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def main(argv=None):
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("F4D_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        cfg = cfgmod.resolve(args.profile, args.config, args.sets)
        return COMMANDS[args.command](args, cfg)
    except (VersionError, ChecksumError) as e:
        log.error("%s", e)
        return 4
    except InvalidInputError as e:
        log.error("%s", e)
        return 2
    except OSError as e:
        log.error("%s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
