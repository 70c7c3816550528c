import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from framepred import pnm
from framepred.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, image_grid, main
from framepred.config import (
    ConfigError,
    RunConfig,
    build_specs,
    build_train_config,
    build_weights,
    config_text,
    load_config,
    parse_config,
)
from framepred.data import load_clip_tree, read_labels
from framepred.losses import LossWeights
from framepred.training import checkpoint_bytes, init_checkpoint, load_checkpoint

TINY = """
[model]
preset = custom
sizes = 8 16
g_maps = 4 | 4
g_kernels = 3 3 | 3 3
d_maps = 4 | 4
d_kernels = 3 | 3
d_fc = 8 | 8
d_pool = no | yes

[data]
clips = 3
eval_clips = 2
frames = 8
height = 16
width = 16
min_size = 3
max_size = 5
patch_size = 16
tau = 0

[train]
steps = 4
batch_size = 2
log_every = 2
rho_g = 0.01
rho_g_final = 0.002

[eval]
export = 1
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(TINY)
    return p


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for f in sorted(root.rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(root)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()

    def test_unknown_key_and_section(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("[train]\nlearning_rate = 1\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[optim]\nlr = 1\n")
        with pytest.raises(ConfigError, match="case|unknown key"):
            parse_config("[train]\nSteps = 3\n")

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="expected int"):
            parse_config("[train]\nsteps = many\n")
        with pytest.raises(ConfigError, match="malformed"):
            parse_config("steps = 3\n")

    def test_overrides(self, cfg_file):
        cfg = load_config(cfg_file, ["train.steps=9", "run.seed = 4"])
        assert cfg.train.steps == 9 and cfg.run.seed == 4 and cfg.data.clips == 3
        with pytest.raises(ConfigError):
            load_config(cfg_file, ["steps=9"])
        with pytest.raises(ConfigError):
            load_config(cfg_file.parent / "nope.ini")

    def test_resolved_roundtrip(self, cfg_file):
        cfg = load_config(cfg_file, ["train.loss=adv-gdl"])
        assert parse_config(config_text(cfg)) == cfg

    def test_loss_presets(self):
        cfg = parse_config("[train]\nloss = l2\n")
        assert build_weights(cfg.train) == LossWeights(0.0, 1.0, 0.0, p=2)
        w = build_weights(parse_config("[train]\nloss = adv-gdl\n").train)
        assert (w.lambda_adv, w.lambda_lp, w.lambda_gdl, w.alpha, w.p) == (0.05, 1.0, 1.0, 1, 2)
        w = build_weights(parse_config("[train]\nloss = gdl-l1\nalpha = 2\n").train)
        assert w.alpha == 2 and w.p == 1
        with pytest.raises(ConfigError):
            build_weights(parse_config("[train]\nloss = huber\n").train)

    def test_adversarial_flag_follows_weight(self):
        assert build_train_config(parse_config("[train]\nloss = adv\n")).adversarial
        assert not build_train_config(parse_config("[train]\nloss = gdl-l2\n")).adversarial

    def test_specs(self, cfg_file):
        g, d = build_specs(load_config(cfg_file).model)
        assert g.n_scales == 2 and d.scales[1].pool
        with pytest.raises(ConfigError, match="preset"):
            build_specs(parse_config("[model]\npreset = huge\n").model)
        with pytest.raises(ConfigError, match="only apply"):
            build_specs(parse_config("[model]\ng_maps = 3\n").model)
        with pytest.raises(ConfigError):
            build_specs(parse_config("[model]\npreset = custom\nsizes = 8 12\ng_maps = 1|1\ng_kernels = 3 3|3 3\n").model)


class TestGrid:
    def test_width(self):
        f = np.zeros((4, 1, 32, 32))
        grid = image_grid(f, f[:2], f[:2])
        assert grid.shape == (3, 32, 8 * 32 + 7 * 2)
        assert (grid[:, :, 32:34] == 255).all()

    def test_rgb_passthrough(self, rng):
        f = rng.integers(0, 256, size=(1, 3, 4, 4)).astype(float)
        grid = image_grid(f, f, f, sep=1)
        np.testing.assert_array_equal(grid[:, :, :4], f[0])


class TestCommands:
    def test_synth_deterministic(self, cfg_file, tmp_path):
        assert main(["synth", "--config", str(cfg_file), "--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(["synth", "--config", str(cfg_file), "--out", str(tmp_path / "b")]) == EXIT_OK
        assert tree_digest(tmp_path / "a") != ""
        assert (tmp_path / "a" / "resolved.ini").exists()
        a, b = tmp_path / "a", tmp_path / "b"
        for split in ("train", "eval"):
            assert tree_digest(a / split) == tree_digest(b / split)
        clips = load_clip_tree(a / "train")
        assert len(clips) == 3 and all(c.shape[0] == 8 for c in clips)
        assert read_labels(a / "train") is None

    def test_splits_are_disjoint(self, cfg_file, tmp_path):
        main(["synth", "--config", str(cfg_file), "--out", str(tmp_path)])
        tr, ev = load_clip_tree(tmp_path / "train"), load_clip_tree(tmp_path / "eval")
        assert not any(np.array_equal(a, b) for a in tr for b in ev)

    def test_bimodal_labels(self, cfg_file, tmp_path):
        rc = main(["synth", "--config", str(cfg_file), "--out", str(tmp_path), "--set", "data.source=bimodal"])
        assert rc == EXIT_OK
        labels = read_labels(tmp_path / "train")
        assert len(labels) == 3 and set(labels) <= {0, 1}

    def test_zero_step_train(self, cfg_file, tmp_path):
        rc = main(["train", "--config", str(cfg_file), "--out", str(tmp_path), "--set", "train.steps=0",
                   "--set", "train.checkpoint_every=2"])
        assert rc == EXIT_OK
        assert list((tmp_path / "checkpoints").iterdir()) == []
        ck = load_checkpoint(tmp_path / "checkpoint.fpck")
        cfg = load_config(cfg_file, ["train.steps=0"])
        g, _ = build_specs(cfg.model)
        init = init_checkpoint(build_train_config(cfg), g)
        assert ck.step == 0
        for (_, a), (_, b) in zip(ck.g_params.items(), init.g_params.items()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_train_predict_eval(self, cfg_file, tmp_path):
        out = str(tmp_path)
        args = ["--config", str(cfg_file), "--out", out]
        assert main(["train", *args, "--set", "train.loss=adv", "--set", "train.checkpoint_every=2"]) == EXIT_OK
        assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == [
            "step0000002.fpck", "step0000004.fpck"]
        log = (tmp_path / "train_log.tsv").read_text().splitlines()
        assert log[0].split("\t")[:3] == ["step", "rho_g", "d_loss"] and len(log) == 3
        ck = tmp_path / "checkpoint.fpck"
        assert main(["predict", *args, "--checkpoint", str(ck)]) == EXIT_OK
        grid = pnm.read(tmp_path / "predict" / "grid.ppm")
        assert grid.shape == (3, 16, 8 * 16 + 7 * 2)
        assert len(list((tmp_path / "predict" / "frames").iterdir())) == 2
        assert main(["eval", *args, "--checkpoint", str(ck), "--set", "eval.steps=2"]) == EXIT_OK
        report = (tmp_path / "eval" / "report.txt").read_text()
        assert "source=baseline" in report and "variant=full" in report and "variant=masked" in report
        first = report
        assert main(["eval", *args, "--checkpoint", str(ck), "--set", "eval.steps=2"]) == EXIT_OK
        assert (tmp_path / "eval" / "report.txt").read_text() == first

    def test_train_reproducible(self, cfg_file, tmp_path):
        for name in ("a", "b"):
            assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / name)]) == EXIT_OK
        a = checkpoint_bytes(load_checkpoint(tmp_path / "a" / "checkpoint.fpck"))
        b = checkpoint_bytes(load_checkpoint(tmp_path / "b" / "checkpoint.fpck"))
        assert a == b

    def test_resolved_config_reproduces_run(self, cfg_file, tmp_path):
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "a"), "--seed", "3"])
        resolved = tmp_path / "a" / "resolved.ini"
        main(["train", "--config", str(resolved), "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "checkpoint.fpck").read_bytes()
        assert a == (tmp_path / "b" / "checkpoint.fpck").read_bytes()

    def test_predict_larger_frames(self, cfg_file, tmp_path):
        args = ["--config", str(cfg_file), "--out", str(tmp_path)]
        main(["train", *args, "--set", "train.steps=1"])
        big = ["--set", "data.height=32", "--set", "data.width=32"]
        assert main(["predict", *args, *big, "--checkpoint", str(tmp_path / "checkpoint.fpck")]) == EXIT_OK
        assert pnm.read(tmp_path / "predict" / "grid.ppm").shape[1] == 32

    def test_exit_codes(self, cfg_file, tmp_path, capsys):
        args = ["--config", str(cfg_file), "--out", str(tmp_path)]
        assert main(["train", *args, "--set", "train.bogus=1"]) == EXIT_CONFIG
        assert main(["train", *args, "--preset", "nope"]) == EXIT_CONFIG
        assert main(["train", *args, "--set", "data.source=dir"]) == EXIT_CONFIG
        assert main(["train", *args, "--set", "data.path=" + str(tmp_path / "missing")]) == EXIT_DATA
        assert main(["eval", *args, "--checkpoint", str(tmp_path / "none.fpck")]) == EXIT_DATA
        (tmp_path / "junk.fpck").write_bytes(b"nope")
        assert main(["predict", *args, "--checkpoint", str(tmp_path / "junk.fpck")]) == EXIT_DATA
        main(["train", *args, "--set", "train.steps=1"])
        odd = ["--set", "data.height=17", "--set", "data.width=17"]
        assert main(["predict", *args, *odd, "--checkpoint", str(tmp_path / "checkpoint.fpck")]) == EXIT_DATA
        assert main(["train", *args, "--set", "train.rho_g=1e36", "--set", "train.rho_g_final=1e36"]) == EXIT_DIVERGED
        err = capsys.readouterr().err
        assert "config error" in err and "data error" in err and "diverged" in err

    def test_console_script_module(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "framepred.cli", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "synth" in r.stdout
