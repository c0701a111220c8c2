"""CLI behavior: dispatch, config resolution, exit codes, file traffic.

Everything runs in-process through main(argv) so capsys sees the output;
one subprocess test at the end confirms the installed entry point.
"""

import subprocess
import sys

import numpy as np
import pytest
from PIL import Image
from test_model import populate_bn, tiny_cfg, zero_heads

from hymir import cli, verify
from hymir.checkpoint import save_checkpoint
from hymir.config import TrainConfig, format_configs
from hymir.counting import count_flops, count_params
from hymir.data import save_image, synth_clean
from hymir.model import build

TINY_LINES = [
    "base_channels = 4",
    "blocks_per_stage = 2",
    "window_base = 4",
    "window_step = 4",
    "ssm_state = 2",
    "total_steps = 2",
    "batch = 1",
    "crop = 16",
    "eval_every = 2",
    "lr_init = 0.001",
    "lr_min = 1e-05",
]


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("# smoke model\n" + "\n".join(TINY_LINES) + "\n")
    return path


@pytest.fixture
def identity_ckpt(tmp_path):
    """Zero-head checkpoint: restoring is the identity map."""
    cfg = tiny_cfg()
    model = build(cfg, seed=0)
    populate_bn(model)
    zero_heads(model)
    path = tmp_path / "identity.ckpt"
    save_checkpoint(path, model, format_configs(cfg, TrainConfig()))
    return path


class TestCount:
    def test_totals_match_library(self, capsys):
        assert cli.main(["count", "--hw", "64x48"]) == 0
        out = capsys.readouterr().out
        model = build(tiny_cfg(base_channels=32, blocks_per_stage=4, window_base=8, window_step=8), seed=0)
        assert f"{count_params(model).total:,}" in out
        assert f"{count_flops(model, 64, 48).total:,}" in out

    def test_prints_resolved_config(self, capsys):
        assert cli.main(["count", "--base-channels", "4", "--blocks-per-stage", "2"]) == 0
        out = capsys.readouterr().out
        assert "# resolved config" in out
        assert "base_channels = 4" in out

    def test_bad_hw_is_usage_error(self, capsys):
        assert cli.main(["count", "--hw", "64"]) == 2

    def test_invalid_field_value_is_usage_error(self, capsys):
        assert cli.main(["count", "--base-channels", "zero"]) == 2
        assert "base_channels" in capsys.readouterr().err


class TestVerifyCommand:
    def test_oracle_suite_passes(self, capsys):
        assert cli.main(["verify", "--suite", "oracles"]) == 0
        out = capsys.readouterr().out
        assert out.count("[ ok ]") == len(verify.ORACLE_CHECKS)
        assert "[FAIL]" not in out

    def test_failing_check_fails_the_run(self, capsys, monkeypatch):
        def boom():
            raise AssertionError("forced")

        monkeypatch.setattr(verify, "ORACLE_CHECKS", [("o: forced failure", boom)])
        assert cli.main(["verify", "--suite", "oracles"]) == 1
        assert "[FAIL] o: forced failure" in capsys.readouterr().out

    def test_unknown_suite_rejected(self, capsys):
        assert cli.main(["verify", "--suite", "everything"]) == 2


class TestTrain:
    def test_smoke_run_writes_artifacts(self, tmp_path, tiny_config_file, capsys):
        out_dir = tmp_path / "run"
        code = cli.main(
            ["train", "--config", str(tiny_config_file), "--out", str(out_dir), "--synthetic", "3", "--size", "32"]
        )
        assert code == 0
        for name in ("best.ckpt", "last.ckpt", "metrics.log"):
            assert (out_dir / name).is_file()
        out = capsys.readouterr().out
        assert "# resolved config" in out
        assert "base_channels = 4" in out
        assert "step      1" in out and "step      2" in out
        assert "done: 2 steps" in out

    def test_flag_overrides_config_file(self, tmp_path, tiny_config_file, capsys):
        code = cli.main(
            ["train", "--config", str(tiny_config_file), "--total-steps", "1", "--synthetic", "2", "--size", "32"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "total_steps = 1" in out
        assert "done: 1 steps" in out

    def test_data_and_synthetic_conflict(self, tmp_path, capsys):
        assert cli.main(["train", "--data", str(tmp_path), "--synthetic", "2"]) == 2
        assert cli.main(["train"]) == 2

    def test_size_below_crop_rejected(self, tiny_config_file, capsys):
        code = cli.main(["train", "--config", str(tiny_config_file), "--synthetic", "2", "--size", "8"])
        assert code == 2
        assert "crop" in capsys.readouterr().err

    def test_bad_tag_rejected(self, tiny_config_file, capsys):
        assert cli.main(["train", "--config", str(tiny_config_file), "--synthetic", "2", "--tag", "fog"]) == 2

    def test_missing_config_file_is_io_error(self, tmp_path, capsys):
        assert cli.main(["train", "--config", str(tmp_path / "nope.cfg"), "--synthetic", "2"]) == 3

    def test_malformed_config_file_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("base_channels\n")
        assert cli.main(["train", "--config", str(bad), "--synthetic", "2"]) == 2

    def test_bad_resume_checkpoint_is_io_error(self, tmp_path, tiny_config_file, capsys):
        missing = cli.main(
            ["train", "--config", str(tiny_config_file), "--synthetic", "2", "--resume", str(tmp_path / "no.ckpt")]
        )
        assert missing == 3
        garbage = tmp_path / "garbage.ckpt"
        garbage.write_bytes(b"not a checkpoint")
        corrupt = cli.main(
            ["train", "--config", str(tiny_config_file), "--synthetic", "2", "--resume", str(garbage)]
        )
        assert corrupt == 3


class TestInfer:
    def test_identity_checkpoint_reproduces_inputs(self, tmp_path, identity_ckpt, capsys):
        src = tmp_path / "in"
        src.mkdir()
        save_image(synth_clean(3, 40, 56), src / "a.png")
        save_image(synth_clean(4, 24, 24), src / "b.png")
        dst = tmp_path / "out"
        code = cli.main(["infer", "--ckpt", str(identity_ckpt), "--input", str(src), "--output", str(dst)])
        assert code == 0
        for name in ("a.png", "b.png"):
            before = np.asarray(Image.open(src / name))
            after = np.asarray(Image.open(dst / name))
            assert np.array_equal(before, after)
        out = capsys.readouterr().out
        assert "# resolved config" in out and "wrote" in out

    def test_single_file_input(self, tmp_path, identity_ckpt, capsys):
        src = tmp_path / "one.png"
        save_image(synth_clean(5, 32, 32), src)
        dst = tmp_path / "out"
        assert cli.main(["infer", "--ckpt", str(identity_ckpt), "--input", str(src), "--output", str(dst)]) == 0
        assert (dst / "one.png").is_file()

    def test_missing_input_is_io_error(self, tmp_path, identity_ckpt, capsys):
        code = cli.main(
            ["infer", "--ckpt", str(identity_ckpt), "--input", str(tmp_path / "void"), "--output", str(tmp_path)]
        )
        assert code == 3

    def test_unreadable_image_is_io_error(self, tmp_path, identity_ckpt, capsys):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"\x89PNG but not really")
        code = cli.main(["infer", "--ckpt", str(identity_ckpt), "--input", str(bad), "--output", str(tmp_path / "o")])
        assert code == 3

    def test_missing_checkpoint_is_io_error(self, tmp_path, capsys):
        code = cli.main(
            ["infer", "--ckpt", str(tmp_path / "no.ckpt"), "--input", str(tmp_path), "--output", str(tmp_path)]
        )
        assert code == 3


class TestEval:
    def test_prints_score_table(self, identity_ckpt, capsys):
        code = cli.main(["eval", "--ckpt", str(identity_ckpt), "--synthetic", "2", "--size", "32", "--tag", "noise"])
        assert code == 0
        out = capsys.readouterr().out
        assert "image" in out and "psnr" in out and "mean" in out
        # identity restorer: output PSNR equals input PSNR
        lines = [ln for ln in out.splitlines() if ln.startswith("noise-")]
        assert len(lines) == 2
        for ln in lines:
            cols = ln.split()
            assert cols[1] == cols[2]

    def test_ycbcr_flag(self, identity_ckpt, capsys):
        code = cli.main(
            ["eval", "--ckpt", str(identity_ckpt), "--synthetic", "2", "--size", "32", "--tag", "noise", "--ycbcr"]
        )
        assert code == 0
        assert "(luma)" in capsys.readouterr().out

    def test_corrupt_checkpoint_is_io_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"zzzz")
        assert cli.main(["eval", "--ckpt", str(bad), "--synthetic", "2"]) == 3

    def test_missing_data_dir_is_io_error(self, tmp_path, identity_ckpt, capsys):
        assert cli.main(["eval", "--ckpt", str(identity_ckpt), "--data", str(tmp_path / "void")]) == 3


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert cli.main(["polish"]) == 2

    def test_unknown_flag(self, capsys):
        assert cli.main(["count", "--sparkle"]) == 2

    def test_no_subcommand(self, capsys):
        assert cli.main([]) == 2

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == 0
        assert "train" in capsys.readouterr().out


def test_installed_entry_point():
    proc = subprocess.run(
        ["hymir", "count", "--base-channels", "4", "--blocks-per-stage", "2"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert "parameters" in proc.stdout or "total" in proc.stdout
