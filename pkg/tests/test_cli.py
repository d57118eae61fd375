import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parent.parent


def run_cli(*args, check=True):
    env = dict(os.environ, MIXVOX_LOG="warning")
    proc = subprocess.run(
        [sys.executable, "-m", "mixvox.cli", *args],
        capture_output=True, text=True, env=env, cwd=REPO,
    )
    if check and proc.returncode != 0:
        raise AssertionError(
            f"cli {' '.join(args)} failed rc={proc.returncode}\n"
            f"stdout: {proc.stdout}\nstderr: {proc.stderr}"
        )
    return proc


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    run_cli("gen-phantom", "--count", "12", "--seed", "3", "--out", str(out))
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run") / "t"
    cfgp = tmp_path_factory.mktemp("cfg") / "run.json"
    cfgp.write_text(json.dumps({
        "model": {"base_width": 2, "depth": 2, "num_bins": 2, "seed": 0},
        "train": {"experiment_id": "1111", "epochs": 1,
                  "learning_rate": 0.001, "seed": 1},
    }))
    run_cli("train", "--config", str(cfgp), "--data", str(dataset),
            "--out", str(out))
    return out


class TestGenPhantom:
    def test_writes_bundles_and_manifest(self, dataset):
        listing = json.loads((dataset / "dataset.json").read_text())
        assert listing["count"] == 12
        assert sum(listing["strata"].values()) == 12
        assert len(listing["exams"]) == 12
        first = dataset / listing["exams"][0]
        assert (first / "manifest.json").is_file()

    def test_refuses_nonempty_dir_without_force(self, dataset, tmp_path):
        proc = run_cli("gen-phantom", "--count", "2", "--seed", "1",
                       "--out", str(dataset), check=False)
        assert proc.returncode == 1

    def test_rerun_same_seed_is_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            run_cli("gen-phantom", "--count", "3", "--seed", "11", "--out", str(out))
        names = json.loads((a / "dataset.json").read_text())["exams"]
        for name in names:
            for f in sorted((a / name).iterdir()):
                assert f.read_bytes() == (b / name / f.name).read_bytes(), f.name


class TestTrain:
    def test_invalid_experiment_fails_before_compute(self, tmp_path):
        proc = run_cli("train", "--experiment", "2x11", "--data", "/nonexistent",
                       "--out", str(tmp_path / "x"), check=False)
        assert proc.returncode != 0
        assert "experiment" in (proc.stderr + proc.stdout).lower()

    def test_unknown_config_key_rejected(self, tmp_path, dataset):
        cfgp = tmp_path / "bad.json"
        cfgp.write_text(json.dumps({"train": {"not_a_field": 1}}))
        proc = run_cli("train", "--config", str(cfgp), "--data", str(dataset),
                       "--out", str(tmp_path / "o"), check=False)
        assert proc.returncode == 1
        assert "not_a_field" in (proc.stderr + proc.stdout)

    def test_materializes_config_and_checkpoints(self, trained):
        assert (trained / "config.json").is_file()
        assert (trained / "best.ckpt").is_file()
        assert (trained / "last.ckpt").is_file()
        assert (trained / "training_log.jsonl").is_file()

    def test_segmentation_only_log_has_only_seg_terms(self, tmp_path, dataset):
        out = tmp_path / "seg"
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({
            "model": {"base_width": 2, "depth": 2, "num_bins": 2},
            "train": {"experiment_id": "0001", "epochs": 1,
                      "learning_rate": 0.001},
        }))
        run_cli("train", "--config", str(cfgp), "--data", str(dataset),
                "--out", str(out))
        for line in (out / "training_log.jsonl").read_text().splitlines():
            rec = json.loads(line)
            if "total" not in rec:
                continue
            assert "seg_dice" in rec and "seg_bce" in rec
            for term in ("ggmap", "hist_strong", "hist_high", "region_classifier"):
                assert term not in rec

    def test_experiment_1110_log_has_no_seg_terms(self, tmp_path, dataset):
        out = tmp_path / "noseg"
        run_cli("train", "--experiment", "1110", "--data", str(dataset),
                "--out", str(out), "--config", str(_mini_cfg(tmp_path)))
        saw_any = False
        for line in (out / "training_log.jsonl").read_text().splitlines():
            rec = json.loads(line)
            if "total" not in rec:
                continue
            saw_any = True
            assert "seg_dice" not in rec and "seg_bce" not in rec
        assert saw_any


def _mini_cfg(tmp_path):
    cfgp = tmp_path / "mini.json"
    cfgp.write_text(json.dumps({
        "model": {"base_width": 2, "depth": 2, "num_bins": 2},
        "train": {"epochs": 1, "learning_rate": 0.001},
    }))
    return cfgp


class TestEvalInferGradcheck:
    def test_eval_writes_reports(self, tmp_path, dataset, trained):
        out = tmp_path / "metrics"
        run_cli("eval", "--checkpoint", str(trained / "best.ckpt"),
                "--data", str(dataset), "--experiment", "1111",
                "--out", str(out))
        report = json.loads((out / "metrics.json").read_text())
        assert report["rule"] == "msb"
        assert 0.0 <= report["iou_mean"] <= 1.0
        assert (out / "metrics.csv").read_text().startswith("experiment,")
        assert report["pirads_ge4"] is not None
        assert report["pirads_ge5"] is not None

    def test_infer_report_structure(self, tmp_path, dataset, trained):
        listing = json.loads((dataset / "dataset.json").read_text())
        exam_dir = dataset / listing["exams"][0]
        out = tmp_path / "infer"
        run_cli("infer", "--checkpoint", str(trained / "best.ckpt"),
                "--exam", str(exam_dir), "--out", str(out))
        report = json.loads((out / "report.json").read_text())
        manifest = json.loads((exam_dir / "manifest.json").read_text())
        assert len(report["regions"]) == len(manifest["regions"])
        for region in report["regions"]:
            assert abs(sum(region["histogram"]) - 1.0) < 1e-5
            assert {"mode_bin", "msb_bin", "scores"} <= set(region)
        assert "gland" in report
        assert (out / "risk_map.f32").stat().st_size == 32 * 32 * 16 * 4

    def test_gradcheck_exits_zero(self):
        # subsampled probe: the acceptance suite runs the full sweep
        proc = run_cli("gradcheck", "--step", "1e-5", "--tolerance", "1e-4",
                       "--max-entries", "4")
        assert "max relative error" in proc.stdout


def test_usage_error_for_unknown_command():
    proc = run_cli("not-a-command", check=False)
    assert proc.returncode != 0
