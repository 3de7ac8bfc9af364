"""End-to-end CLI tests on a miniature dataset: exit codes, file contracts,
log determinism, resume behavior, and the eval/report output schemas."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from scenerecon import io as sio
from scenerecon.cli import main
from scenerecon.metrics import MetricReport
from scenerecon.synthdata import read_manifest


def write_json(path: Path, payload: dict) -> str:
    path.write_text(json.dumps(payload, indent=1))
    return str(path)


DATA_CFG = {
    "data": {"train": 3, "val": 2, "k_choices": [1, 2], "n_complete": 96,
             "image_size": 16, "base_seed": 5}
}
AE_CFG = {
    "stage1": {"m_tokens": 8, "channels": 16, "heads": 1,
               "encoder_self_layers": 1, "decoder_blocks": 1},
    "flow": {"step_size": 0.5},
    "train": {"batch_size": 2, "n_train": 48, "checkpoint_every": 2, "eval_every": 3},
}
IMG_CFG = {
    "stage2": {"image_size": 16, "patch_size": 4, "layers": 1, "channels": 16,
               "heads": 1, "max_views": 4},
    "flow": {"step_size": 0.5},
    "train": {"batch_size": 2, "n_train": 32},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared tiny dataset + trained checkpoints for the command tests."""
    root = tmp_path_factory.mktemp("cliws")
    data_cfg = write_json(root / "data.json", DATA_CFG)
    assert main(["gen-data", "--config", data_cfg, "--out", str(root / "data")]) == 0
    manifest = root / "data" / "manifest.jsonl"
    assert manifest.exists()

    ae_cfg = write_json(root / "ae.json", AE_CFG)
    ae_ckpt = root / "ae.nck"
    rc = main(["train-ae", "--config", ae_cfg, "--data", str(manifest),
               "--out", str(ae_ckpt), "--steps", "6", "--seed", "1"])
    assert rc == 0 and ae_ckpt.exists()

    img_cfg = write_json(root / "img.json", IMG_CFG)
    img_ckpt = root / "img.nck"
    rc = main(["train-img", "--config", img_cfg, "--data", str(manifest),
               "--stage1", str(ae_ckpt), "--out", str(img_ckpt), "--steps", "4",
               "--seed", "2"])
    assert rc == 0 and img_ckpt.exists()
    return {"root": root, "manifest": manifest, "ae": ae_ckpt, "img": img_ckpt}


class TestGenData:
    def test_happy_path_prints_manifest(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "d.json",
                         {"data": {"train": 1, "val": 1, "n_complete": 64, "image_size": 16}})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "manifest.jsonl" in out
        assert (tmp_path / "out" / "manifest.jsonl").exists()

    def test_malformed_json_exit2_names_byte_offset(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"data": {"train": 1,, }}')
        rc = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "byte offset" in err

    def test_unknown_key_suggests_close_match(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "d.json", {"data": {"train": 1, "voxel_sz": 0.1}})
        rc = main(["gen-data", "--config", cfg, "--out", str(tmp_path / "o")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "voxel_sz" in err and "voxel_size" in err

    def test_console_entry_point(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        proc = subprocess.run(
            [sys.executable, "-m", "scenerecon.cli", "gen-data",
             "--config", str(bad), "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2


class TestTrainAE:
    def test_log_has_one_line_per_step(self, workspace):
        log = workspace["ae"].with_suffix(".loss.jsonl")
        lines = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(lines) == 6
        assert [l["step"] for l in lines] == list(range(1, 7))
        assert all(set(l) == {"step", "loss", "wall_time"} for l in lines)

    def test_val_log_written(self, workspace):
        val_log = workspace["ae"].with_suffix(".val.jsonl")
        lines = [json.loads(l) for l in val_log.read_text().splitlines()]
        assert [l["step"] for l in lines] == [3, 6]
        assert all(np.isfinite(l["val_loss"]) for l in lines)

    def test_resume_continues_step_numbering(self, workspace, tmp_path):
        cfg = write_json(tmp_path / "ae.json", AE_CFG)
        ckpt = tmp_path / "r.nck"
        main(["train-ae", "--config", cfg, "--data", str(workspace["manifest"]),
              "--out", str(ckpt), "--steps", "4", "--seed", "3"])
        rc = main(["train-ae", "--config", cfg, "--data", str(workspace["manifest"]),
                   "--out", str(ckpt), "--steps", "3", "--seed", "3",
                   "--resume", str(ckpt)])
        assert rc == 0
        lines = [json.loads(l) for l in ckpt.with_suffix(".loss.jsonl").read_text().splitlines()]
        assert [l["step"] for l in lines] == [1, 2, 3, 4, 5, 6, 7]

    def test_non_finite_loss_exit1_keeps_last_checkpoint(self, workspace, tmp_path):
        cfg = dict(AE_CFG)
        cfg["train"] = {**AE_CFG["train"], "lr": 1e28, "grad_clip": 0.0,
                        "checkpoint_every": 1}
        cfg_path = write_json(tmp_path / "explode.json", cfg)
        ckpt = tmp_path / "x.nck"
        rc = main(["train-ae", "--config", cfg_path, "--data", str(workspace["manifest"]),
                   "--out", str(ckpt), "--steps", "30", "--seed", "0"])
        assert rc == 1
        assert ckpt.exists()  # last good step's checkpoint was retained
        lines = ckpt.with_suffix(".loss.jsonl").read_text().splitlines()
        assert 1 <= len(lines) < 30
        assert all(np.isfinite(json.loads(l)["loss"]) for l in lines)

    def test_identical_seed_identical_losses(self, workspace, tmp_path):
        cfg = write_json(tmp_path / "ae.json", AE_CFG)
        losses = []
        for name in ("a", "b"):
            ckpt = tmp_path / f"{name}.nck"
            main(["train-ae", "--config", cfg, "--data", str(workspace["manifest"]),
                  "--out", str(ckpt), "--steps", "5", "--seed", "9"])
            lines = [json.loads(l) for l in
                     ckpt.with_suffix(".loss.jsonl").read_text().splitlines()]
            losses.append([l["loss"] for l in lines])
        np.testing.assert_allclose(losses[0], losses[1], atol=1e-6)
        # artifacts other than timestamped logs are byte-identical
        assert (tmp_path / "a.nck").read_bytes() == (tmp_path / "b.nck").read_bytes()


class TestInfer:
    def test_writes_npc_with_requested_points(self, workspace, tmp_path, capsys):
        rec = read_manifest(workspace["manifest"], "val")[0]
        image_path = workspace["root"] / "data" / rec["views"][0]["image"]
        out = tmp_path / "pred.npc"
        rc = main(["infer", "--images", str(image_path), "--stage1", str(workspace["ae"]),
                   "--stage2", str(workspace["img"]), "--points", "50",
                   "--fm-step", "0.5", "--out", str(out), "--seed", "4"])
        assert rc == 0
        cloud = sio.read_npc(out)
        assert len(cloud) == 50
        assert "units=normalized" in capsys.readouterr().out


@pytest.fixture(scope="module")
def eval_dir(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    rc = main(["eval", "--data", str(workspace["manifest"]), "--stage1",
               str(workspace["ae"]), "--stage2", str(workspace["img"]),
               "--points", "64", "--fm-step", "0.5", "--out", str(out), "--seed", "0"])
    assert rc == 0
    return out


class TestEval:
    def test_csv_columns_match_metric_report(self, eval_dir, rng):
        with open(eval_dir / "per_sample.csv") as f:
            header = next(csv.reader(f))
        from scenerecon.geometry import PointCloud
        from scenerecon.metrics import compute_report

        pts = rng.normal(size=(30, 3))
        flat = compute_report(PointCloud(pts), PointCloud(pts + 0.01)).to_flat_dict()
        assert header == ["id", "method"] + list(flat)

    def test_gt_sanity_rows(self, eval_dir):
        with open(eval_dir / "per_sample.csv") as f:
            rows = list(csv.DictReader(f))
        gt_rows = [r for r in rows if r["method"] == "gt"]
        assert gt_rows
        for r in gt_rows:
            assert float(r["cd"]) == 0.0
            assert float(r["fs@0.1"]) == 1.0
            assert float(r["fs@0.02"]) == 1.0
            assert float(r["hole_ratio"]) == 0.0

    def test_aggregate_means_match_csv(self, eval_dir):
        agg = json.loads((eval_dir / "aggregate.json").read_text())
        with open(eval_dir / "per_sample.csv") as f:
            rows = list(csv.DictReader(f))
        for method in ("stage2", "visible", "noise", "gt"):
            vals = [float(r["cd"]) for r in rows if r["method"] == method]
            assert agg["methods"][method]["cd"]["mean"] == pytest.approx(np.mean(vals), rel=1e-9)

    def test_pred_clouds_exported(self, eval_dir):
        clouds = list((eval_dir / "clouds").glob("*_pred.npc"))
        assert len(clouds) == 2  # val split size
        for c in clouds:
            assert len(sio.read_npc(c)) == 64

    def test_failed_sample_keeps_partial_csv_and_exits_1(self, workspace, tmp_path):
        import shutil

        data_dir = tmp_path / "data"
        shutil.copytree(workspace["root"] / "data", data_dir)
        rec = read_manifest(data_dir / "manifest.jsonl", "val")[0]
        # corrupt one val sample's image: wrong dimensions break tokenize
        bad_img = data_dir / rec["views"][0]["image"]
        sio.write_nim(bad_img, np.zeros((4, 4, 3)))
        out = tmp_path / "eval_fail"
        rc = main(["eval", "--data", str(data_dir / "manifest.jsonl"),
                   "--stage1", str(workspace["ae"]), "--stage2", str(workspace["img"]),
                   "--points", "48", "--fm-step", "1.0", "--out", str(out), "--seed", "0"])
        assert rc == 1
        with open(out / "per_sample.csv") as f:
            rows = list(csv.DictReader(f))
        good_ids = {r["id"] for r in rows}
        assert rec["id"] not in good_ids and len(good_ids) == 1  # the other val sample

    def test_align_flag_writes_alignments(self, workspace, tmp_path):
        out = tmp_path / "eval_ts"
        rc = main(["eval", "--data", str(workspace["manifest"]), "--stage1",
                   str(workspace["ae"]), "--stage2", str(workspace["img"]),
                   "--points", "48", "--fm-step", "1.0", "--align", "ts",
                   "--out", str(out), "--seed", "0"])
        assert rc == 0
        lines = [json.loads(l) for l in (out / "alignments.jsonl").read_text().splitlines()]
        assert len(lines) == 2
        for line in lines:
            assert set(line) == {"id", "translation", "scale", "objective"}
            assert line["scale"] > 0


class TestReport:
    def test_two_runs_two_rows_per_metric(self, workspace, tmp_path, capsys):
        runs = []
        for name in ("runA", "runB"):
            out = tmp_path / name
            rc = main(["eval", "--data", str(workspace["manifest"]), "--stage1",
                       str(workspace["ae"]), "--stage2", str(workspace["img"]),
                       "--points", "48", "--fm-step", "1.0", "--out", str(out),
                       "--seed", "1"])
            assert rc == 0
            runs.append(out)
        report_dir = tmp_path / "report"
        rc = main(["report", "--runs", f"runA={runs[0]},runB={runs[1]}",
                   "--out", str(report_dir)])
        assert rc == 0
        text = (report_dir / "report.md").read_text()
        for metric in ("cd", "fs@0.1", "hole_ratio", "density_var"):
            rows = [l for l in text.splitlines() if l.startswith(f"| {metric} |")]
            assert len(rows) == 2, metric
        # exported clouds re-parse as valid NPC1
        exported = list((report_dir / "clouds").glob("*.npc"))
        assert exported
        for path in exported:
            sio.read_npc(path)

    def test_missing_run_dir_exit2_names_it(self, tmp_path, capsys):
        rc = main(["report", "--runs", str(tmp_path / "nope"), "--out", str(tmp_path / "r")])
        assert rc == 2
        assert "nope" in capsys.readouterr().err
