"""Hole masks, synthetic sprite videos with exact flow, and the quality metrics."""
# %%
import numpy as np

from sttn.data import SamplingPlan, SyntheticSceneSpec, build_batch, generate_clip
from sttn.maskgen import MaskSpec, generate_stationary_mask, mask_seeds
from sttn.metrics import psnr, ssim, warping_error

# %% [markdown]
# Masks are closed random Bezier contours, filled. Seeds are derived from one
# master seed so a run of N masks is reproducible.

# %%
areas = []
for s in mask_seeds(0, 200):
    m = generate_stationary_mask(MaskSpec(240, 432, seed=s))
    areas.append(m.mean())
print(f"200 masks at 432x240: hole area {np.min(areas):.1%} .. {np.max(areas):.1%}, mean {np.mean(areas):.1%}")

small = generate_stationary_mask(MaskSpec(18, 40, seed=3))
print("\n".join("".join("#" if v else "." for v in row) for row in small))

# %% [markdown]
# Sprites move over a static background. The flow between consecutive frames
# is known exactly, so warping the clip with it leaves no error.

# %%
clip = generate_clip(SyntheticSceneSpec(n_frames=12, n_sprites=3, seed=4))
print("frames", clip.frames.shape, "flow", clip.flows.flow.shape)
print("warping error with true flow:", warping_error(clip.frames, clip.flows))
shuffled = clip.frames[np.random.default_rng(0).permutation(12)]
print("warping error after shuffling frames:", warping_error(shuffled, clip.flows))

# %% [markdown]
# A sampling plan picks the neighbours of a target frame plus every s-th
# frame of the video.

# %%
plan = SamplingPlan(target=10, radius=2, rate=5, n_frames=12)
print("neighbours", plan.neighbors(), "distant", plan.distant())
masks = np.zeros((12, 1, 36, 64))
frames, ms, idx = build_batch(clip.frames, masks, plan)
print("batch", frames.shape, ms.shape, "from zero-based frames", idx)

# %% metrics on a few degradations
truth = clip.frames
noisy = np.clip(truth + np.random.default_rng(1).normal(0, 0.05, truth.shape), 0, 1)
print(f"identical: PSNR {psnr(truth, truth)}  SSIM {ssim(truth, truth):.6f}")
print(f"noise 0.05: PSNR {psnr(truth, noisy):.2f}  SSIM {ssim(truth, noisy):.4f}")
print(f"uniform 0.1 offset: PSNR {psnr(np.zeros(10), np.full(10, 0.1))}")
