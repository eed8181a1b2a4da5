import numpy as np
import pytest

from sttn.config import Config
from sttn.models import Generator
from sttn.tensor import Tensor
from sttn.train import (Adam, TrainingDiverged, complete, infer_video, learning_rate, load_generator,
                        mean_fill, sample_training_clip, to_model_range, to_unit_range, train,
                        window_centers)


def tiny(**kw):
    base = dict(frame_height=16, frame_width=16, enc_channels=(4, 4, 6, 8), dec_channels=(6, 4, 4),
                head_patch_shapes=((4, 4), (2, 2), (2, 1), (1, 1)), disc_channels=(4,) * 6,
                video_frames=6, steps=4, checkpoint_every=2)
    base.update(kw)
    return Config(**base).validate()


def test_learning_rate_schedule():
    cfg = Config(lr=1e-4, lr_decay_step=100)
    assert learning_rate(cfg, 1) == 1e-4 and learning_rate(cfg, 100) == 1e-4
    assert learning_rate(cfg, 101) == pytest.approx(1e-5)
    assert learning_rate(cfg, 201) == pytest.approx(1e-6)


def test_adam_first_step_is_lr_times_sign():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.array([0.5, -4.0, 0.0])
    Adam([p]).step(0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-6)


def test_range_conversions_roundtrip():
    f = np.random.default_rng(0).random((2, 4, 4, 3))
    m = to_model_range(f, np.float64)
    assert m.shape == (2, 3, 4, 4) and m.min() >= -1 and m.max() <= 1
    np.testing.assert_allclose(to_unit_range(m), f)


def test_training_clip_shapes():
    frames, masks = sample_training_clip(np.random.default_rng(0), Config())
    assert frames.shape == (5, 3, 36, 64) and masks.shape == (5, 1, 36, 64)
    assert set(np.unique(masks)) <= {0.0, 1.0} and masks.any()


def test_mean_fill():
    f = np.zeros((1, 2, 2, 3))
    f[0, 0, 0] = 1.0
    m = np.zeros((1, 1, 2, 2))
    m[0, 0, 1, 1] = 1
    out = mean_fill(f, m)
    np.testing.assert_allclose(out[0, 1, 1], 1 / 3)
    np.testing.assert_array_equal(out[0, 0], f[0, 0])


def test_window_centers_cover_all_frames():
    assert window_centers(4, 2) == [2]
    for n in range(6, 40):
        c = window_centers(n, 2)
        covered = {i for x in c for i in range(x - 2, x + 3)}
        assert set(range(1, n + 1)) <= covered


def test_empty_masks_give_input_back():
    cfg = tiny()
    gen = Generator(cfg)
    frames = np.random.default_rng(1).random((3, 16, 16, 3))
    out = complete(gen, frames, np.zeros((3, 1, 16, 16)))
    np.testing.assert_allclose(out, frames, atol=1e-6)


def test_infer_video_short_and_long():
    cfg = tiny()
    gen = Generator(cfg)
    rng = np.random.default_rng(2)
    masks = np.zeros((12, 1, 16, 16))
    masks[:, :, 4:8, 4:8] = 1
    frames = rng.random((12, 16, 16, 3))
    short = infer_video(gen, cfg, frames[:4], masks[:4])
    np.testing.assert_allclose(short, complete(gen, frames[:4], masks[:4]))
    full = infer_video(gen, cfg, frames, masks)
    assert full.shape == frames.shape
    known = masks[:, 0] == 0
    np.testing.assert_allclose(full[known], frames[known], atol=1e-6)
    np.testing.assert_array_equal(full, infer_video(gen, cfg, frames, masks))


def test_training_is_deterministic_and_prefetch_neutral(tmp_path):
    cfg = tiny()
    a = train(cfg, tmp_path / "a", log_every=0)
    b = train(cfg, tmp_path / "b", prefetch=2, log_every=0)
    assert [r["L_hole"] for r in a.history] == [r["L_hole"] for r in b.history]
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()
    gen, stored = load_generator(tmp_path / "a" / "checkpoint.bin", cfg)
    assert stored == cfg
    for (_, p), (_, q) in zip(gen.named_parameters(), a.generator.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = tiny(steps=5, checkpoint_every=3)
    full = train(cfg, tmp_path / "full", log_every=0)
    train(cfg, tmp_path / "part", steps=3, log_every=0)
    resumed = train(cfg, tmp_path / "part", resume=True, log_every=0)
    assert [r["step"] for r in resumed.history] == [4, 5]
    assert (tmp_path / "full" / "checkpoint.bin").read_bytes() == (tmp_path / "part" / "checkpoint.bin").read_bytes()
    assert (tmp_path / "full" / "losses.csv").read_text() == (tmp_path / "part" / "losses.csv").read_text()


def test_divergence_is_reported(tmp_path, monkeypatch):
    import sttn.train as tr

    real_step = tr.train_step

    def poisoned(*args, **kw):
        rec = real_step(*args, **kw)
        rec["L_hole"] = float("nan")
        return rec

    monkeypatch.setattr(tr, "train_step", poisoned)
    with pytest.raises(TrainingDiverged):
        train(tiny(), tmp_path, log_every=0)
    assert (tmp_path / "divergence.json").exists() and (tmp_path / "divergence.bin").exists()
