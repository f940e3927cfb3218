import json
import os

import numpy as np
import pytest

from dermcnn import cli
from dermcnn import dataset as ds
from dermcnn.nn.checkpoint import load_checkpoint, save_checkpoint
from dermcnn.synthetic import make_blob_dataset

SPEC_TEXT = """input h=16 w=16 c=3
conv2d out=8 k=3 stride=1 pad=1
relu
maxpool2d size=2 stride=2
conv2d out=16 k=3 stride=1 pad=1
relu
maxpool2d size=2 stride=2
flatten
dense units=16
relu
dropout rate=0.25
dense units=1
sigmoid_head
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    metadata, image_dir = make_blob_dataset(root / "data", n_images=24, image_size=16, seed=3)
    (root / "model.spec").write_text(SPEC_TEXT)
    return {"root": root, "metadata": metadata, "image_dir": image_dir}


def run(argv):
    return cli.main([str(a) for a in argv])


def train_config(ws, out_dir, epochs=3):
    path = ws["root"] / f"train_{os.path.basename(out_dir)}.cfg"
    path.write_text(
        f"batch_size = 8\n"
        f"epochs = {epochs}\n"
        f"val_every_iters = 2\n"
        f"seed = 11\n"
        f"lr = 0.01\n"
        f"spec_path = {ws['root'] / 'model.spec'}\n"
        f"manifest_path = {ws['root'] / 'split.csv'}\n"
        f"data_dir = {ws['image_dir']}\n"
        f"output_dir = {out_dir}\n"
        f"balance = true\n"
    )
    return path


class TestUsage:
    def test_no_arguments_usage_exit_1(self, capsys):
        assert run([]) == 1

    def test_help_exits_zero(self):
        assert run(["--help"]) == 0

    def test_subcommand_help_exits_zero(self):
        for sub in ("ingest", "split", "preprocess", "augment-preview", "train",
                    "evaluate", "predict", "saliency", "benchmark"):
            assert run([sub, "--help"]) == 0

    def test_unknown_flag_exit_1(self):
        assert run(["split", "--nope"]) == 1

    def test_train_missing_manifest_exit_2(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(
            f"manifest_path = {tmp_path / 'missing.csv'}\n"
            f"data_dir = {workspace['image_dir']}\n"
        )
        assert run(["train", "--config", cfg]) == 2
        assert "missing.csv" in capsys.readouterr().err


class TestPipeline:
    def test_full_pipeline(self, workspace, capsys):
        ws = workspace
        root = ws["root"]
        manifest = root / "manifest.csv"
        split_manifest = root / "split.csv"

        assert run(["ingest", "--metadata", ws["metadata"], "--data-dir", ws["image_dir"],
                    "--out", manifest]) == 0
        assert manifest.exists()
        loaded = ds.read_manifest(manifest, ws["image_dir"])
        assert len(loaded.records) == 24

        assert run(["--seed", "11", "split", "--manifest", manifest, "--out", split_manifest,
                    "--train-frac", "0.5", "--val-frac", "0.25", "--test-frac", "0.25"]) == 0
        split_loaded = ds.read_manifest(split_manifest, ws["image_dir"])
        assert len(split_loaded.ids_in_split("train")) == 12

        out_dir = root / "run1"
        cfg = train_config(ws, out_dir)
        assert run(["train", "--config", cfg]) == 0
        assert (out_dir / "epoch_0002.ckpt").exists()
        assert (out_dir / "best.ckpt").exists()
        assert (out_dir / "train_log.csv").read_text().startswith("kind,epoch,iter,loss,acc,seconds")
        assert (out_dir / "run_train.json").exists()

        eval_dir = root / "eval1"
        assert run(["evaluate", "--ckpt", out_dir / "best.ckpt", "--manifest", split_manifest,
                    "--data-dir", ws["image_dir"], "--split", "test", "--out", eval_dir]) == 0
        report = (eval_dir / "report_test.txt").read_text()
        assert "accuracy=" in report
        assert (eval_dir / "roc_test.csv").exists()

        pred_file = root / "preds.csv"
        assert run(["predict", "--ckpt", out_dir / "best.ckpt", "--manifest", split_manifest,
                    "--data-dir", ws["image_dir"], "--split", "test", "--out", pred_file]) == 0
        lines = pred_file.read_text().strip().splitlines()
        assert lines[0] == "image_id,score,predicted_label"
        assert len(lines) == 1 + len(split_loaded.ids_in_split("test"))

        train_id = split_loaded.ids_in_split("train")[0]
        sal_dir = root / "sal"
        assert run(["saliency", "--image", train_id, "--ckpt", out_dir / "best.ckpt",
                    "--manifest", split_manifest, "--data-dir", ws["image_dir"],
                    "--patch", "4", "--stride", "4", "--out", sal_dir]) == 0
        assert (sal_dir / f"{train_id}_saliency.csv").exists()
        assert (sal_dir / f"{train_id}_saliency.png").exists()

        prev_dir = root / "aug"
        assert run(["--seed", "4", "augment-preview", "--manifest", split_manifest,
                    "--data-dir", ws["image_dir"], "--image", train_id,
                    "--out", prev_dir, "--n", "3"]) == 0
        assert len(list(prev_dir.glob("*_aug_*.png"))) == 3

        bench_file = root / "bench.json"
        assert run(["benchmark", "--manifest", split_manifest, "--data-dir", ws["image_dir"],
                    "--spec", root / "model.spec", "--epochs", "1", "--batch-size", "8",
                    "--hardware", "test-box", "--out", bench_file]) == 0
        payload = json.loads(bench_file.read_text())
        assert len(payload["seconds_per_epoch"]) == 1
        assert payload["seconds_per_epoch"][0] > 0

    def test_preprocess_writes_tensors_and_report(self, workspace):
        ws = workspace
        root = ws["root"]
        pp_dir = root / "preprocessed"
        assert run(["preprocess", "--manifest", root / "split.csv", "--data-dir", ws["image_dir"],
                    "--out", pp_dir, "--mean-window", "5", "--height", "16", "--width", "16"]) == 0
        report_lines = (pp_dir / "report.csv").read_text().strip().splitlines()
        assert report_lines[0] == "image_id,n_flagged_pixels,kept"
        assert len(report_lines) == 25
        tensors = list(pp_dir.glob("*.dct"))
        assert len(tensors) == 24
        from dermcnn.image import load_image

        img = load_image(tensors[0])
        assert img.shape == (16, 16, 3)

    def test_train_from_preprocessed_tensors(self, workspace):
        ws = workspace
        root = ws["root"]
        pp_dir = root / "preprocessed"
        out_dir = root / "run_pp"
        cfg = root / "train_pp.cfg"
        cfg.write_text(
            f"batch_size = 8\nepochs = 1\nval_every_iters = 2\nseed = 1\n"
            f"spec_path = {root / 'model.spec'}\n"
            f"manifest_path = {pp_dir / 'manifest.csv'}\n"
            f"data_dir = {pp_dir}\noutput_dir = {out_dir}\nbalance = false\n"
        )
        assert run(["train", "--config", cfg]) == 0
        assert (out_dir / "epoch_0000.ckpt").exists()

    def test_identical_invocations_identical_artifacts(self, workspace):
        ws = workspace
        root = ws["root"]
        outs = []
        for name in ("det_a", "det_b"):
            out_dir = root / name
            cfg = train_config(ws, out_dir, epochs=2)
            assert run(["train", "--config", cfg]) == 0
            outs.append(out_dir)
        ckpt_a = (outs[0] / "epoch_0001.ckpt").read_bytes()
        ckpt_b = (outs[1] / "epoch_0001.ckpt").read_bytes()
        assert ckpt_a == ckpt_b

    def test_numeric_failure_exit_3(self, workspace, capsys):
        ws = workspace
        root = ws["root"]
        source = root / "run1" / "best.ckpt"
        spec, params, state, epoch, extra = load_checkpoint(source)
        params[0]["w"] = params[0]["w"] * np.float32(np.nan)
        poisoned = root / "poisoned.ckpt"
        save_checkpoint(poisoned, spec, params, state, epoch=0, seed=11, extra=extra)
        out_dir = root / "run_poisoned"
        cfg = train_config(ws, out_dir, epochs=3)
        assert run(["train", "--config", cfg, "--resume", poisoned]) == 3
        assert "numeric" in capsys.readouterr().err


class TestDataDirFallback:
    def test_env_fallback(self, workspace, tmp_path, monkeypatch):
        ws = workspace
        monkeypatch.setenv("DERM_DATA_DIR", str(ws["image_dir"]))
        manifest = tmp_path / "m.csv"
        assert run(["ingest", "--metadata", ws["metadata"], "--out", manifest]) == 0
        assert manifest.exists()

    def test_missing_data_dir_is_data_error(self, workspace, tmp_path, monkeypatch):
        monkeypatch.delenv("DERM_DATA_DIR", raising=False)
        assert run(["ingest", "--metadata", workspace["metadata"], "--out", tmp_path / "m.csv"]) == 2
