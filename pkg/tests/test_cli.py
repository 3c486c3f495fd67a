import csv
import json

import pytest
import yaml

from dualvad.cli import ablation_table, run
from dualvad.config import ConfigError, load_config


@pytest.fixture()
def tiny(tmp_path):
    cfg = {
        "data": {"root": str(tmp_path / "data"), "resolution": 32},
        "scene": {"canvas": 32, "sprite_size": 4, "frames_per_video": 18, "train_videos": 2,
                  "test_videos": 3},
        "network": {"channels": [8, 16, 32], "bottleneck": 16, "reduction": 4},
        "train": {"epochs": 1, "batch_size": 8},
        "ablate": {"variants": ["D", "E"]},
        "output": str(tmp_path / "run"),
    }
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert run(["gen-data", "-c", str(path)]) == 0
    return path, tmp_path


def test_train_eval_score_pipeline(tiny, capsys):
    path, tmp = tiny
    assert run(["train", "-c", str(path)]) == 0
    run_dir = tmp / "run"
    assert (run_dir / "final.pt").exists() and (run_dir / "FORMAT_VERSION").read_text() == "1\n"
    resolved = yaml.safe_load((run_dir / "config.resolved.yaml").read_text())
    assert resolved["network"]["bottleneck"] == 16 and resolved["variant"] == "E"

    assert run(["eval", "-c", str(path)]) == 0
    rows = list(csv.DictReader(open(run_dir / "scores.csv")))
    assert len(rows) == 3 * (18 - 4)
    assert all(0 <= float(r["regularity"]) <= 1 for r in rows)
    assert any((run_dir / "error_maps").rglob("err_*.png"))
    auc = json.loads((run_dir / "summary.json").read_text())["auc"]
    assert 0 <= auc <= 1

    assert run(["score", "-c", str(path), "--tau", "1.0"]) == 0
    rescored = list(csv.DictReader(open(run_dir / "rescored.csv")))
    assert [r["psnr"] for r in rescored] == [r["psnr"] for r in rows]
    assert "frame-level AUC" in capsys.readouterr().out


def test_flags_override_file(tiny):
    path, tmp = tiny
    cfg = load_config(path, ["train.epochs=3", "seed=9"])
    assert cfg.train.epochs == 3 and cfg.train.seed == 9 and cfg.network.channels == (8, 16, 32)


def test_unknown_keys_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  epochz: 3\nfoo: 1\n")
    with pytest.raises(ConfigError, match="foo, train.epochz"):
        load_config(bad)
    assert run(["train", "-c", str(bad)]) == 2
    assert "unknown config keys" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config(None, ["network.width=3"])


def test_missing_dataset_is_reported(tmp_path, capsys):
    assert run(["train", "--root", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2
    assert "nowhere" in capsys.readouterr().err


def test_ablation_table_layout():
    table = ablation_table({"A": {0: 0.5, 1: 0.7}, "E": {0: 0.9, 1: 0.95}})
    lines = table.splitlines()
    assert lines[0] == "| Model | S_app | S_motion | M | STC | ASTFM | AUC seed 0 | AUC seed 1 | AUC mean |"
    assert lines[2] == "| A | x |  | x |  |  | 0.5000 | 0.7000 | 0.6000 |"
    assert lines[3] == "| E | x | x | x | x | x | 0.9000 | 0.9500 | 0.9250 |"


def test_ablate_command(tiny):
    path, tmp = tiny
    assert run(["ablate", "-c", str(path), "--seeds", "0"]) == 0
    table = (tmp / "run" / "ablation.md").read_text()
    assert table.count("\n") == 4
    assert (tmp / "run" / "seed_0" / "D" / "scores.csv").exists()


@pytest.mark.parametrize("cmd", ["gen-data", "train", "eval", "score", "ablate"])
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        run([cmd, "--help"])
    assert exc.value.code == 0
    assert "usage: dualvad " + cmd in capsys.readouterr().out


def test_identical_runs_give_identical_scores(tiny):
    path, tmp = tiny
    texts = []
    for name in ("r1", "r2"):
        out = str(tmp / name)
        assert run(["train", "-c", str(path), "--out", out]) == 0
        assert run(["eval", "-c", str(path), "--out", out, "--no-error-maps"]) == 0
        texts.append((tmp / name / "scores.csv").read_bytes())
    assert texts[0] == texts[1]
