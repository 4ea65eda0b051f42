"""Configuration resolution and the command-line surface."""

import csv
import subprocess
import sys

import numpy as np
import pytest

from m2fcn.config import ConfigError, load_run_config
from m2fcn.subnet import receptive_field

CLI = [sys.executable, "-m", "m2fcn.cli"]


def run_cli(args, **kw):
    return subprocess.run(
        CLI + args, capture_output=True, text=True, timeout=600, **kw
    )


# ---- profile defaults ----


def test_toy_profile_defaults():
    cfg = load_run_config(profile="toy", env={})
    assert cfg.profile == "toy"
    assert cfg.network.stages == 2
    assert len(cfg.network.subnet.levels) == 3
    assert cfg.network.recursive_mode == "all"
    assert cfg.seed == 0
    assert cfg.data.height == cfg.data.width == 48
    assert cfg.schedule.momentum == 0.9
    assert cfg.schedule.weight_decay == 2e-4


def test_paper_profile_geometry():
    cfg = load_run_config(profile="paper", env={})
    assert cfg.network.stages == 3
    levels = cfg.network.subnet.levels
    assert len(levels) == 5
    assert tuple(l.channels for l in levels) == (64, 128, 256, 512, 512)
    assert tuple(l.convs for l in levels) == (2, 2, 3, 3, 3)
    fields = [receptive_field(cfg.network.subnet, l) for l in range(1, 6)]
    assert [s for s, _ in fields] == [1, 2, 4, 8, 16]
    assert [rf for _, rf in fields] == [5, 14, 40, 92, 196]


def test_default_profile_is_toy():
    assert load_run_config(env={}).profile == "toy"


# ---- precedence ----


def test_file_overrides_profile(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[network]\nstages = 3\n")
    cfg = load_run_config(path=ini, env={})
    assert cfg.network.stages == 3


def test_override_beats_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[network]\nstages = 3\n[run]\nseed = 7\n")
    cfg = load_run_config(path=ini, overrides=["network.stages=4"], env={})
    assert cfg.network.stages == 4
    assert cfg.seed == 7


def test_env_seed_between_file_and_override(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 7\n")
    cfg = load_run_config(path=ini, env={"M2FCN_SEED": "21"})
    assert cfg.seed == 21
    cfg = load_run_config(
        path=ini, env={"M2FCN_SEED": "21"}, overrides=["run.seed=5"]
    )
    assert cfg.seed == 5


def test_profile_selectable_from_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nprofile = paper\n")
    cfg = load_run_config(path=ini, env={})
    assert cfg.profile == "paper"
    assert cfg.network.stages == 3


# ---- rejection paths ----


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        load_run_config(overrides=["network.depth=4"], env={})


def test_unknown_profile_rejected():
    with pytest.raises(ConfigError):
        load_run_config(profile="huge", env={})


def test_type_errors_rejected():
    with pytest.raises(ConfigError):
        load_run_config(overrides=["run.seed=banana"], env={})
    with pytest.raises(ConfigError):
        load_run_config(overrides=["train.phase1_lr=fast"], env={})


def test_bad_override_shape_rejected():
    with pytest.raises(ConfigError):
        load_run_config(overrides=["seedless"], env={})


def test_widths_shorter_than_levels_rejected():
    with pytest.raises(ConfigError):
        load_run_config(overrides=["network.widths=8, 16"], env={})


def test_widths_longer_than_levels_truncated():
    cfg = load_run_config(
        overrides=["network.widths=8, 16, 16, 99, 99"], env={}
    )
    assert tuple(l.channels for l in cfg.network.subnet.levels) == (8, 16, 16)


def test_recursive_single_parsing():
    cfg = load_run_config(overrides=["network.recursive=single:2"], env={})
    assert cfg.network.recursive_mode == "single"
    assert cfg.network.recursive_level == 2
    with pytest.raises((ConfigError, ValueError)):
        load_run_config(overrides=["network.recursive=single:9"], env={})


def test_threshold_list():
    cfg = load_run_config(env={})
    ts = cfg.eval.thresholds()
    assert len(ts) == 33
    assert abs(ts[0] - 0.02) < 1e-12
    assert abs(ts[-1] - 0.98) < 1e-12
    assert abs(ts[1] - ts[0] - 0.03) < 1e-12


# ---- CLI end to end ----


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny synth corpus plus a short training run, shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    r = run_cli(
        [
            "synth",
            "--out",
            str(data),
            "--set",
            "data.n_train=2",
            "--set",
            "data.n_test=1",
        ]
    )
    assert r.returncode == 0, r.stderr
    out = root / "run1"
    r = run_cli(
        [
            "train",
            "--data",
            str(data),
            "--out",
            str(out),
            "--set",
            "train.phase1_iters=4",
            "--set",
            "train.phase2_iters=6",
        ]
    )
    assert r.returncode == 0, r.stderr
    return root


def test_cli_synth_layout(workdir):
    data = workdir / "data"
    assert (data / "manifest.txt").is_file()
    names = sorted(p.name for p in (data / "images").iterdir())
    assert names == ["000.pgm", "001.pgm", "002.pgm"]
    assert not list(data.glob("**/*.partial"))


def test_cli_train_artifacts(workdir):
    out = workdir / "run1"
    assert (out / "model.m2f").is_file()
    with open(out / "loss_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "iteration",
        "fused_loss_stage1",
        "fused_loss_stage2",
        "total_loss",
    ]
    assert len(rows) == 1 + 6  # joint-phase iterations
    with open(out / "pretrain_log.csv") as fh:
        pre = list(csv.reader(fh))
    assert pre[0] == ["iteration", "fused_loss_stage1", "total_loss"]
    assert len(pre) == 1 + 4  # stage-1 warmup iterations


def test_cli_rerun_byte_identical(workdir):
    out2 = workdir / "run2"
    r = run_cli(
        [
            "train",
            "--data",
            str(workdir / "data"),
            "--out",
            str(out2),
            "--set",
            "train.phase1_iters=4",
            "--set",
            "train.phase2_iters=6",
        ]
    )
    assert r.returncode == 0, r.stderr
    a = (workdir / "run1" / "model.m2f").read_bytes()
    b = (out2 / "model.m2f").read_bytes()
    assert a == b
    assert (workdir / "run1" / "loss_log.csv").read_text() == (
        out2 / "loss_log.csv"
    ).read_text()


def test_cli_predict_then_eval(workdir):
    pred = workdir / "pred"
    r = run_cli(
        [
            "predict",
            "--model",
            str(workdir / "run1" / "model.m2f"),
            "--data",
            str(workdir / "data"),
            "--out",
            str(pred),
            "--split",
            "test",
        ]
    )
    assert r.returncode == 0, r.stderr
    maps = sorted(p.name for p in pred.iterdir())
    assert maps == ["pred_002.pgm"]
    ev = workdir / "eval1"
    r = run_cli(
        [
            "eval",
            "--model",
            str(workdir / "run1" / "model.m2f"),
            "--data",
            str(workdir / "data"),
            "--out",
            str(ev),
        ]
    )
    assert r.returncode == 0, r.stderr
    text = (ev / "scores.txt").read_text()
    assert "rand_fscore" in text
    with open(ev / "pr_curve.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["threshold", "rand_split", "rand_merge", "fscore"]
    # unscoreable thresholds are dropped, so the curve holds at most 33 rows
    assert 2 <= len(rows) <= 1 + 33


def test_cli_eval_perfect_maps_score_one(workdir, tmp_path):
    from m2fcn.data import load_dataset, save_image

    pred = tmp_path / "perfect"
    pred.mkdir()
    for name, sample in load_dataset(workdir / "data", split="test"):
        save_image(pred / f"pred_{name}.pgm", (~sample.mask).astype(float))
    ev = tmp_path / "eval"
    r = run_cli(
        [
            "eval",
            "--pred",
            str(pred),
            "--data",
            str(workdir / "data"),
            "--out",
            str(ev),
        ]
    )
    assert r.returncode == 0, r.stderr
    scores = dict(
        line.split(" = ")
        for line in (ev / "scores.txt").read_text().splitlines()
        if line
    )
    assert float(scores["rand_fscore"]) == 1.0
    assert float(scores["rand_merge"]) == 1.0
    assert float(scores["rand_split"]) == 1.0


def test_cli_eval_requires_exactly_one_source(workdir, tmp_path):
    r = run_cli(
        ["eval", "--data", str(workdir / "data"), "--out", str(tmp_path / "x")]
    )
    assert r.returncode == 2
    r = run_cli(
        [
            "eval",
            "--model",
            str(workdir / "run1" / "model.m2f"),
            "--pred",
            str(tmp_path),
            "--data",
            str(workdir / "data"),
            "--out",
            str(tmp_path / "y"),
        ]
    )
    assert r.returncode == 2


def test_cli_gradcheck_passes():
    r = run_cli(["gradcheck", "--max-entries", "2"])
    assert r.returncode == 0, r.stderr
    assert "gradcheck PASS" in r.stdout
    for suite in ("conv2d", "maxpool2", "upsample", "network+loss"):
        assert suite in r.stdout


def test_cli_gradcheck_strict_tolerance_fails():
    r = run_cli(["gradcheck", "--max-entries", "1", "--tolerance", "1e-12"])
    assert r.returncode == 1
    assert "gradcheck FAIL" in r.stdout


def test_cli_exit_code_usage_errors(tmp_path):
    r = run_cli(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")])
    assert r.returncode == 2
    r = run_cli(["synth", "--out", str(tmp_path / "d"), "--set", "data.cells=4"])
    assert r.returncode == 2
    r = run_cli(["frobnicate"])
    assert r.returncode == 2


def test_cli_seed_flag_changes_model(workdir, tmp_path):
    out = tmp_path / "seeded"
    r = run_cli(
        [
            "train",
            "--data",
            str(workdir / "data"),
            "--out",
            str(out),
            "--seed",
            "3",
            "--set",
            "train.phase1_iters=4",
            "--set",
            "train.phase2_iters=6",
        ]
    )
    assert r.returncode == 0, r.stderr
    assert (out / "model.m2f").read_bytes() != (
        workdir / "run1" / "model.m2f"
    ).read_bytes()


def test_cli_no_partial_files_after_success(workdir):
    leftovers = list(workdir.glob("**/*.partial"))
    assert leftovers == []
