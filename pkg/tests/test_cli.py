import hashlib
import json
import os

import numpy as np
import pytest

from f4d.cli import main
from f4d.datagen import Dataset
from f4d.geometry import write_off


TINY_DATA = ["--set", "data.L=5", "--set", "data.n_points=64", "--set", "data.n_query=256"]
TINY_MODEL = ["--set", "model.code_dim=16", "--set", "model.hidden=16"]
TINY_TRAIN = TINY_MODEL + ["--set", "train.steps=8", "--set", "train.queries_per_step=64",
                           "--set", "train.batch_pairs=1", "--set", "train.eval_every=0",
                           "--set", "train.checkpoint_every=4"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    rc = main(["gen-data", "--ids", "2", "--motions", "2", "--out", str(out),
               "--seed", "3"] + TINY_DATA)
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = main(["train", "--data", str(data_dir), "--out", str(out), "--seed", "1"]
              + TINY_TRAIN)
    assert rc == 0
    return out


class TestGenData:
    def test_cross_product_and_manifest(self, data_dir):
        ds = Dataset(data_dir)
        assert len(ds.keys()) == 4
        assert (data_dir / "manifest.json").exists()

    def test_same_seed_identical_manifest(self, tmp_path, data_dir):
        out2 = tmp_path / "ds2"
        rc = main(["gen-data", "--ids", "2", "--motions", "2", "--out", str(out2),
                   "--seed", "3"] + TINY_DATA)
        assert rc == 0
        h1 = hashlib.sha256((data_dir / "manifest.json").read_bytes()).hexdigest()
        h2 = hashlib.sha256((out2 / "manifest.json").read_bytes()).hexdigest()
        assert h1 == h2

    def test_single_identity_rejected(self, tmp_path):
        rc = main(["gen-data", "--ids", "1", "--motions", "2",
                   "--out", str(tmp_path / "bad")] + TINY_DATA)
        assert rc == 2

    def test_unknown_config_key_rejected(self, tmp_path):
        rc = main(["gen-data", "--ids", "2", "--motions", "2",
                   "--out", str(tmp_path / "bad2"), "--set", "data.nope=1"])
        assert rc == 2


class TestTrain:
    def test_metrics_monotone_steps(self, train_dir):
        lines = (train_dir / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,loss_t0,loss_tau,eval_iou"
        steps = [int(l.split(",")[0]) for l in lines[1:]]
        assert steps == sorted(steps) and len(set(steps)) == len(steps)

    def test_resume_matches_uninterrupted(self, tmp_path, data_dir, train_dir):
        part = tmp_path / "part"
        rc = main(["train", "--data", str(data_dir), "--out", str(part), "--seed", "1"]
                  + TINY_MODEL + ["--set", "train.steps=4", "--set", "train.queries_per_step=64",
                                  "--set", "train.batch_pairs=1", "--set", "train.eval_every=0",
                                  "--set", "train.checkpoint_every=0"])
        assert rc == 0
        resumed = tmp_path / "resumed"
        rc = main(["train", "--data", str(data_dir), "--out", str(resumed), "--seed", "1",
                   "--resume", str(part / "ckpt_final")] + TINY_TRAIN)
        assert rc == 0
        full_rows = (train_dir / "metrics.csv").read_text().splitlines()[5:]
        res_rows = (resumed / "metrics.csv").read_text().splitlines()[1:]
        assert full_rows == res_rows


class TestReconstructTransferEval:
    def test_reconstruct_writes_off_files(self, tmp_path, data_dir, train_dir):
        out = tmp_path / "rec"
        rc = main(["reconstruct", "--model", str(train_dir / "ckpt_final" / "model"),
                   "--data", str(data_dir), "--id", "0", "--motion", "0",
                   "--out", str(out), "--times", "3", "--grid-res", "12"])
        assert rc == 0
        assert sorted(os.listdir(out)) == [f"frame_{k:04d}.off" for k in range(3)]

    def test_transfer_self_matches_reconstruct(self, tmp_path, data_dir, train_dir):
        rec = tmp_path / "rec2"
        tra = tmp_path / "tra"
        model = str(train_dir / "ckpt_final" / "model")
        main(["reconstruct", "--model", model, "--data", str(data_dir), "--id", "1",
              "--motion", "1", "--out", str(rec), "--times", "2", "--grid-res", "12"])
        rc = main(["transfer", "--model", model, "--data", str(data_dir),
                   "--identity-from", "1,1", "--motion-from", "1,1",
                   "--out", str(tra), "--times", "2", "--grid-res", "12"])
        assert rc == 0
        for name in os.listdir(rec):
            assert (rec / name).read_bytes() == (tra / name).read_bytes()

    def test_eval_identical_dirs_perfect_iou(self, tmp_path, data_dir):
        ds = Dataset(data_dir)
        gt_dir = tmp_path / "gt_meshes"
        os.makedirs(gt_dir)
        for k, t in enumerate((0.0, 1.0)):
            write_off(ds.ground_truth_mesh(0, 0, t), gt_dir / f"frame_{k:04d}.off")
        out = tmp_path / "eval"
        rc = main(["eval", "--pred", str(gt_dir), "--gt", str(gt_dir), "--out", str(out),
                   "--set", "eval.n_iou_points=1000", "--set", "eval.n_surface_points=200"])
        assert rc == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        for line in lines[1:3]:
            assert line.split(",")[3] == "1.0"

    def test_version_mismatch_exit_4(self, tmp_path, data_dir, train_dir):
        import shutil

        broken = tmp_path / "broken_model"
        shutil.copytree(train_dir / "ckpt_final" / "model", broken)
        meta = json.loads((broken / "model.json").read_text())
        meta["format_version"] = 99
        (broken / "model.json").write_text(json.dumps(meta))
        rc = main(["reconstruct", "--model", str(broken), "--data", str(data_dir),
                   "--id", "0", "--motion", "0", "--out", str(tmp_path / "x"),
                   "--times", "2", "--grid-res", "8"])
        assert rc == 4

    def test_corrupt_weights_exit_4(self, tmp_path, data_dir, train_dir):
        import shutil

        broken = tmp_path / "crc_model"
        shutil.copytree(train_dir / "ckpt_final" / "model", broken)
        blob = bytearray((broken / "weights.f4dw").read_bytes())
        blob[50] ^= 0xFF
        (broken / "weights.f4dw").write_bytes(bytes(blob))
        rc = main(["reconstruct", "--model", str(broken), "--data", str(data_dir),
                   "--id", "0", "--motion", "0", "--out", str(tmp_path / "y"),
                   "--times", "2", "--grid-res", "8"])
        assert rc == 4

    def test_missing_dataset_exit(self, tmp_path, train_dir):
        rc = main(["reconstruct", "--model", str(train_dir / "ckpt_final" / "model"),
                   "--data", str(tmp_path / "nothing"), "--id", "0", "--motion", "0",
                   "--out", str(tmp_path / "z")])
        assert rc == 2
