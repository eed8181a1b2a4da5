import csv

import numpy as np
import pytest

from sttn import cli
from sttn.config import Config, save_config
from sttn.imageio import read_frames


TINY = ["--set", "frame_height=16", "--set", "frame_width=16", "--set", "enc_channels=4,4,6,8",
        "--set", "dec_channels=6,4,4", "--set", "head_patch_shapes=4x4,2x2,2x1,1x1",
        "--set", "disc_channels=4,4,4,4,4,4", "--set", "video_frames=6"]


def run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_make_masks_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "make-masks", "--count", 5, "--seed", 7, "--out", tmp_path / name)
        assert code == 0 and "config digest: " in out
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == [f"{i:05d}.pgm" for i in range(5)]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / files[0]).read_bytes()[:2] == b"P5"


def test_gen_data_then_eval_identical(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-data", "--count", 2, "--frames", 4, "--out", tmp_path / "data")
    assert code == 0
    video = tmp_path / "data" / "video0000"
    assert (video / "frames" / "00003.png").exists() and (video / "masks" / "00003.pgm").exists()
    with np.load(video / "flows.npz") as z:
        assert z["flow"].shape == (3, 36, 64, 2)
    code, _, _ = run(capsys, "eval", "--truth", tmp_path / "data", "--pred", tmp_path / "data",
                     "--out", tmp_path / "m.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert [r["video"] for r in rows] == ["video0000", "video0001"]
    for r in rows:
        assert float(r["psnr"]) == 100.0 and abs(float(r["ssim"]) - 1.0) < 1e-9
        # frames are 8-bit quantised, so the sprite ramps warp only to rounding
        assert float(r["e_warp"]) < 0.02


def test_train_infer_attn_dump(tmp_path, capsys):
    cfg_file = tmp_path / "toy.cfg"
    cli_cfg = cli.resolve_config(cli.build_parser().parse_args(["selftest"] + TINY))
    save_config(cli_cfg.replace(steps=3, checkpoint_every=2), cfg_file)
    code, out, _ = run(capsys, "train", "--config", cfg_file, "--out", tmp_path / "run")
    assert code == 0, out
    assert (tmp_path / "run" / "checkpoint.bin").exists()
    lines = (tmp_path / "run" / "losses.csv").read_text().splitlines()
    assert lines[0] == "step,L_hole,L_valid,L_adv,L_D" and len(lines) == 4

    code, _, _ = run(capsys, "gen-data", "--config", cfg_file, "--count", 1, "--out", tmp_path / "data")
    assert code == 0
    code, out, _ = run(capsys, "infer", "--checkpoint", tmp_path / "run" / "checkpoint.bin",
                       "--data", tmp_path / "data", "--out", tmp_path / "pred")
    assert code == 0, out
    truth = read_frames(tmp_path / "data" / "video0000" / "frames")
    pred = read_frames(tmp_path / "pred" / "video0000" / "frames")
    assert pred.shape == truth.shape == (6, 16, 16, 3)

    code, out, _ = run(capsys, "attn-dump", "--checkpoint", tmp_path / "run" / "checkpoint.bin",
                       "--data", tmp_path / "data", "--video", "video0000", "--frame", 2,
                       "--out", tmp_path / "attn")
    assert code == 0, out
    names = sorted(p.name for p in (tmp_path / "attn").iterdir())
    # per layer: 1 + 4 + 8 + 16 query patches in one frame
    assert len(names) == 2 * (1 + 4 + 8 + 16)
    assert "layer1_head3_q03x03.pgm" in names

    code, _, err = run(capsys, "infer", "--config", cfg_file, "--set", "seed=9",
                       "--checkpoint", tmp_path / "run" / "checkpoint.bin",
                       "--data", tmp_path / "data", "--out", tmp_path / "pred2")
    assert code == 1 and "digest" in err


def test_validation_errors_exit_1(tmp_path, capsys):
    assert run(capsys, "make-masks", "--count", 2, "--nope")[0] == 1
    assert run(capsys, "make-masks", "--count", 2, "--set", "no_such_key=1")[0] == 1
    assert run(capsys, "make-masks", "--count", 0, "--out", tmp_path)[0] == 1
    assert run(capsys, "eval", "--truth", tmp_path, "--pred", tmp_path)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_layers = many\n")
    assert run(capsys, "selftest", "--config", bad)[0] == 1


def test_runtime_failure_exit_2(monkeypatch, capsys):
    def boom(args, cfg):
        raise RuntimeError("disk on fire")
    monkeypatch.setitem(cli.COMMANDS, "selftest", boom)
    code, out, err = run(capsys, "selftest")
    assert code == 2 and "disk on fire" in err
    assert f"config digest: {Config().digest()}" in out
