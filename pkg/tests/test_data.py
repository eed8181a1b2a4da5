import numpy as np
import pytest

from sttn.data import (SamplingPlan, Sprite, SyntheticSceneSpec, build_batch, generate_clip,
                       random_scene, sample_training_indices)


def sprite(velocity, start=(20.0, 15.0), shape="rect"):
    return Sprite(shape, (4.0, 3.0), np.array([0.8, 0.2, 0.3]), np.zeros((2, 3)),
                  np.array(start), np.array(velocity, float))


def test_zero_velocity_is_static():
    clip = generate_clip(SyntheticSceneSpec(sprites=[sprite((0, 0))], n_frames=6))
    assert all(np.array_equal(clip.frames[0], f) for f in clip.frames)
    assert np.all(clip.flows.flow == 0)


def test_constant_rightward_flow():
    clip = generate_clip(SyntheticSceneSpec(sprites=[sprite((2, 0))], n_frames=5))
    for t in range(4):
        on = clip.layers[t + 1] == 1
        np.testing.assert_array_equal(clip.flows.flow[t][on], np.tile([2.0, 0.0], (on.sum(), 1)))
        np.testing.assert_array_equal(clip.flows.flow[t][~on], 0.0)


def test_clip_determinism():
    spec = SyntheticSceneSpec(seed=11, background="texture", n_sprites=3)
    a, b = generate_clip(spec), generate_clip(spec)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert 0 <= a.frames.min() and a.frames.max() <= 1


@pytest.mark.parametrize("boundary", ["bounce", "wrap"])
def test_positions_stay_inside(boundary):
    spec = SyntheticSceneSpec(seed=3, n_frames=60, boundary=boundary, max_velocity=4)
    clip = generate_clip(spec)
    assert clip.positions[..., 0].min() >= 0 and clip.positions[..., 0].max() <= spec.width - 1
    assert clip.positions[..., 1].min() >= 0 and clip.positions[..., 1].max() <= spec.height - 1


def test_scene_validation():
    with pytest.raises(ValueError):
        SyntheticSceneSpec(max_velocity=5).validate()
    with pytest.raises(ValueError):
        SyntheticSceneSpec(background="noise").validate()


def test_random_scene_ranges():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = random_scene(rng, 36, 64, 10, max_sprites=3)
        assert 1 <= s.n_sprites <= 3 and s.background in ("gradient", "texture")


def test_sampling_plan_example():
    plan = SamplingPlan(target=10, radius=2, rate=10, n_frames=20)
    assert plan.neighbors() == [8, 9, 10, 11, 12]
    assert plan.distant() == [1]
    assert plan.indices() == [8, 9, 10, 11, 12, 1]


def test_sampling_plan_rate_beyond_length():
    assert SamplingPlan(10, 2, 25, 20).distant() == [1]
    assert SamplingPlan(10, 2, 25, 20, include_distant=False).distant() == []


def test_sampling_plan_edges_and_errors():
    plan = SamplingPlan(1, 2, 3, 10)
    assert plan.neighbors() == [1, 2, 3]
    assert plan.distant() == [4, 7, 10]
    with pytest.raises(ValueError):
        SamplingPlan(0, 2, 10, 20)
    with pytest.raises(ValueError):
        SamplingPlan(3, 1, 0, 20)


@pytest.mark.parametrize("seed", range(30))
def test_sampling_plan_unique_and_contains_target(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    plan = SamplingPlan(int(rng.integers(1, n + 1)), int(rng.integers(0, 5)), int(rng.integers(1, 12)), n)
    idx = plan.indices()
    assert len(idx) == len(set(idx)) and plan.target in idx
    assert all(1 <= i <= n for i in idx)


def test_build_batch():
    v = np.arange(20)[:, None] * np.ones((20, 3))
    m = np.zeros((20, 1, 2, 2))
    frames, masks, idx = build_batch(v, m, SamplingPlan(10, 2, 10, 20))
    assert idx == [7, 8, 9, 10, 11, 0]
    np.testing.assert_array_equal(frames[:, 0], idx)
    with pytest.raises(ValueError):
        build_batch(v[:5], m[:5], SamplingPlan(10, 2, 10, 20))


def test_training_indices():
    rng = np.random.default_rng(0)
    runs = [sample_training_indices(rng, 20, 5) for _ in range(200)]
    assert all(len(r) == 5 and r == sorted(r) and len(set(r)) == 5 for r in runs)
    consecutive = sum(r == list(range(r[0], r[0] + 5)) for r in runs)
    assert 60 < consecutive < 140
    with pytest.raises(ValueError):
        sample_training_indices(rng, 3, 5)
