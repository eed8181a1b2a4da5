"""Multi-scale patch attention on a toy feature map."""
# %%
import numpy as np

from sttn import tensor as T
from sttn.patches import extract_patches, patch_visibility, reassemble
from sttn.tensor import Tensor
from sttn.transformer import (AttentionTrace, TransformerLayer, attend, attention_flops, attention_weights,
                              match)

rng = np.random.default_rng(1)

# %% [markdown]
# Features of T frames are cut into patches; every patch of every frame is one
# row. A whole-frame patch gives one row per frame.

# %%
t, c, h, w = 3, 4, 8, 8
f = Tensor(rng.standard_normal((t, c, h, w)))
for shape in [(8, 8), (4, 4), (2, 2), (1, 1)]:
    g = extract_patches(f, shape)
    same = np.array_equal(reassemble(g).data, f.data)
    print(f"patch {shape}: {g.n} rows of length {g.patches.shape[1]}, roundtrip exact: {same}")

# %% [markdown]
# A hole hides every key patch it touches. The query rows still attend, but
# only to what is left.

# %%
mask = np.zeros((t, 1, h, w))
mask[:, :, 2:6, 3:7] = 1
vis = patch_visibility(mask, (2, 2))
print("visible 2x2 key patches per frame:", vis.reshape(t, -1).sum(axis=1), "of", (h // 2) * (w // 2))

q, k, v = (extract_patches(Tensor(rng.standard_normal((t, c, h, w))), (2, 2)) for _ in range(3))
a = attention_weights(match(q, k), vis)
print("rows sum to one:", np.allclose(a.data.sum(axis=1), 1.0))
print("weight on hidden keys:", a.data[:, ~vis].max())
out = attend(a, v)
print("attended grid", out.patches.shape)

# %% [markdown]
# A full layer runs one head per patch size, fuses the heads and adds a small
# residual conv block.

# %%
layer = TransformerLayer(c, ((8, 8), (4, 4), (2, 2), (1, 1)), rng=rng, dtype=np.float64)
trace = AttentionTrace()
with T.no_grad():
    y = layer(f, mask, trace)
print("layer output", y.shape)
for e in trace.entries:
    print(f"  head {e['head']} patch {e['patch_shape'][:2]}: attention matrix {e['weights'].shape}")

# %% [markdown]
# Attention cost is quadratic in the number of frames.

# %%
for frames in (4, 8, 16):
    print(frames, "frames:", attention_flops(frames, 16, 8, 64, ((16, 8), (8, 4), (4, 2), (2, 1))), "FLOPs")
