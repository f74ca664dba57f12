import json
from pathlib import Path

import numpy as np
import pytest

from validmark.cli import main

TINY_CONFIG = {
    "seed": 42,
    "synth": {
        "train_common": 14, "train_challenging": 6,
        "test_common": 6, "test_challenging": 4,
        "landmark_count": 5, "image_size": 64,
    },
    "net": {"input_size": 24, "stem_channels": 4, "block_channels": [4, 8],
            "fc_hidden": 16},
    "optim": {"learning_rate": 0.05, "batch_size": 5},
    "loss": {"outer": "l1", "inner_distance": "manhattan"},
    "augment": {"noise_max_frac": 0.1, "shift_max_frac": 0.1,
                "scale_range": [0.95, 1.05], "blur_prob": 0.2,
                "occlude_prob": 0.2, "contrast_range": [-20, 20]},
    "train": {"epochs": 2, "balancing": "loss-proportional"},
}


def write_config(tmp_path, overrides=None) -> Path:
    cfg = json.loads(json.dumps(TINY_CONFIG))
    if overrides:
        for key, value in overrides.items():
            block, _, leaf = key.partition(".")
            if leaf:
                cfg.setdefault(block, {})[leaf] = value
            else:
                cfg[block] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


def run_pipeline(tmp_path, tag=""):
    cfg = write_config(tmp_path)
    data = tmp_path / f"data{tag}"
    run = tmp_path / f"run{tag}"
    assert main(["--quiet", "gen", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["--quiet", "train", "--config", str(cfg), "--data", str(data),
                 "--out", str(run)]) == 0
    assert main(["--quiet", "eval", "--checkpoint", str(run / "model.ckpt"),
                 "--data", str(data / "test"), "--out", str(run / "summary.csv")]) == 0
    assert main(["--quiet", "pose", "--data", str(data / "test"),
                 "--template", str(data / "template.csv"),
                 "--out", str(run / "poses.csv")]) == 0
    assert main(["--quiet", "report", str(run / "summary.csv"),
                 "--out", str(run / "report.txt")]) == 0
    return data, run


def test_end_to_end_pipeline(tmp_path, capsys):
    data, run = run_pipeline(tmp_path)
    assert (data / "train" / "manifest.csv").exists()
    assert (data / "train" / "common").glob("*.pgm")
    assert (run / "model.ckpt").exists()
    assert (run / "history.csv").exists()
    summary = (run / "summary.csv").read_text().splitlines()
    assert summary[0] == "subset,nme,nme_d10,nme_d20,nme_d30,pearson,availability"
    assert {line.split(",")[0] for line in summary[1:]} == \
        {"common", "challenging", "full"}
    poses = (run / "poses.csv").read_text().splitlines()
    assert poses[0] == \
        "sample_id,yaw_deg,pitch_deg,roll_deg,tx,ty,tz,residual,converged"
    assert len(poses) == 11
    report = (run / "report.txt").read_text()
    for column in ("common", "challenging", "full"):
        assert column in report


def test_report_side_by_side(tmp_path, capsys):
    _, run = run_pipeline(tmp_path)
    other = run / "other.csv"
    other.write_text((run / "summary.csv").read_text())
    assert main(["report", str(run / "summary.csv"), str(other)]) == 0
    out = capsys.readouterr().out
    assert "summary" in out and "other" in out
    assert "10%" in out and "30%" in out


def test_schema_error_unknown_key(tmp_path):
    cfg = write_config(tmp_path, {"optim.momentumm": 0.9})
    assert main(["--quiet", "gen", "--config", str(cfg),
                 "--out", str(tmp_path / "d")]) == 3


def test_schema_error_unknown_section(tmp_path):
    cfg = write_config(tmp_path, {"nets": {}})
    assert main(["--quiet", "gen", "--config", str(cfg),
                 "--out", str(tmp_path / "d")]) == 3


def test_schema_error_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["--quiet", "gen", "--config", str(path),
                 "--out", str(tmp_path / "d")]) == 3


def test_data_error_missing_paths(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["--quiet", "train", "--config", str(cfg),
                 "--data", str(tmp_path / "absent"), "--out",
                 str(tmp_path / "r")]) == 4
    assert main(["--quiet", "eval", "--checkpoint", str(tmp_path / "no.ckpt"),
                 "--data", str(tmp_path / "absent"),
                 "--out", str(tmp_path / "s.csv")]) == 4


def test_eval_checkpoint_landmark_mismatch(tmp_path):
    data, run = run_pipeline(tmp_path)
    other_cfg = write_config(tmp_path, {"synth.landmark_count": 7})
    data7 = tmp_path / "data7"
    assert main(["--quiet", "gen", "--config", str(other_cfg),
                 "--out", str(data7)]) == 0
    assert main(["--quiet", "eval", "--checkpoint", str(run / "model.ckpt"),
                 "--data", str(data7 / "test"),
                 "--out", str(tmp_path / "bad.csv")]) == 4


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["definitely-not-a-command"])
    assert exc.value.code == 2


def test_gen_deterministic_across_runs(tmp_path):
    cfg = write_config(tmp_path)
    for tag in ("1", "2"):
        assert main(["--quiet", "gen", "--config", str(cfg),
                     "--out", str(tmp_path / f"d{tag}")]) == 0
    a = sorted((tmp_path / "d1").rglob("*"))
    b = sorted((tmp_path / "d2").rglob("*"))
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        if pa.is_file():
            assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_threads_flag_does_not_change_outputs(tmp_path):
    cfg = write_config(tmp_path)
    data = tmp_path / "data"
    assert main(["--quiet", "gen", "--config", str(cfg), "--out", str(data)]) == 0
    for tag, threads in (("t1", "1"), ("t2", "3")):
        assert main(["--quiet", "--threads", threads, "train", "--config", str(cfg),
                     "--data", str(data), "--out", str(tmp_path / tag)]) == 0
    assert (tmp_path / "t1" / "model.ckpt").read_bytes() == \
        (tmp_path / "t2" / "model.ckpt").read_bytes()


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["--quiet", "gen", "--config", str(cfg),
                 "--out", str(tmp_path / "base")]) == 0
    assert main(["--quiet", "--seed", "7", "gen", "--config", str(cfg),
                 "--out", str(tmp_path / "seeded")]) == 0
    base = sorted((tmp_path / "base" / "train" / "common").glob("*.pgm"))[0]
    seeded = sorted((tmp_path / "seeded" / "train" / "common").glob("*.pgm"))[0]
    assert base.read_bytes() != seeded.read_bytes()


def test_pose_with_checkpoint(tmp_path):
    data, run = run_pipeline(tmp_path)
    assert main(["--quiet", "pose", "--data", str(data / "test"),
                 "--checkpoint", str(run / "model.ckpt"),
                 "--out", str(run / "pred_poses.csv")]) == 0
    lines = (run / "pred_poses.csv").read_text().splitlines()
    assert len(lines) == 11
