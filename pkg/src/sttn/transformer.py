"""Multi-head, multi-scale patch attention across all frames of a clip."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, ResidualBlock
from .patches import PatchGrid, extract_patches, patch_visibility, reassemble
from .tensor import ShapeError, Tensor


@dataclass
class AttentionTrace:
    """Attention matrices recorded during a forward pass, for inspection only."""

    entries: list[dict] = field(default_factory=list)

    def add(self, layer: int, head: int, weights: np.ndarray, patch_shape, frame_grid):
        self.entries.append({
            "layer": layer, "head": head, "weights": np.array(weights, copy=True),
            "patch_shape": tuple(patch_shape), "frame_grid": tuple(frame_grid),
        })


class TransformerLayer(Module):
    """Embedding, matching and attending for each head; heads are fused by a 1x1
    conv and refined by a 3x3 residual block."""

    def __init__(self, channels: int, head_patch_shapes: Sequence[tuple[int, int]],
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 visibility_threshold: float = 0.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        n_heads = len(head_patch_shapes)
        if n_heads == 0 or channels % n_heads:
            raise ValueError(f"{channels} channels cannot be split across {n_heads} heads")
        self.channels = channels
        self.head_patch_shapes = [tuple(int(v) for v in s) for s in head_patch_shapes]
        self.visibility_threshold = visibility_threshold
        self.query = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.key = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.value = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.fusion = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.refine = ResidualBlock(channels, 3, rng=rng, dtype=dtype)

    @property
    def n_heads(self) -> int:
        return len(self.head_patch_shapes)

    @property
    def head_channels(self) -> int:
        return self.channels // self.n_heads

    def forward(self, f: Tensor, mask: np.ndarray, trace: AttentionTrace | None = None,
                layer_index: int = 0) -> Tensor:
        return layer_forward(f, mask, self, trace, layer_index)


def embed(f: Tensor, layer: TransformerLayer) -> list[tuple[Tensor, Tensor, Tensor]]:
    """Project frames to query/key/value and split channels into heads."""
    if f.ndim != 4 or f.shape[1] != layer.channels:
        raise ShapeError(f"expected (T, {layer.channels}, h, w) features, got {f.shape}")
    q, k, v = layer.query(f), layer.key(f), layer.value(f)
    ch = layer.head_channels
    return [(q[:, i * ch:(i + 1) * ch], k[:, i * ch:(i + 1) * ch], v[:, i * ch:(i + 1) * ch])
            for i in range(layer.n_heads)]


def match(q_grid: PatchGrid, k_grid: PatchGrid) -> Tensor:
    """Scaled patch similarities, one row per query patch."""
    if q_grid.patches.shape != k_grid.patches.shape:
        raise ShapeError(f"query {q_grid.patches.shape} and key {k_grid.patches.shape} differ")
    r1, r2, c = q_grid.patch_shape
    return T.scale(q_grid.patches @ k_grid.patches.T, 1.0 / np.sqrt(r1 * r2 * c))


def attention_weights(similarity: Tensor, visibility: np.ndarray) -> Tensor:
    """Row softmax over visible keys; columns of hidden keys are exactly zero."""
    visibility = np.asarray(visibility, dtype=bool)
    if visibility.shape != (similarity.shape[1],):
        raise ShapeError("visibility must flag every key patch")
    if not visibility.any():
        raise ValueError("no visible key patch: attention is undefined")
    return T.masked_softmax(similarity, visibility[None, :], axis=-1)


def attend(weights: Tensor, v_grid: PatchGrid) -> PatchGrid:
    if weights.shape[1] != v_grid.n:
        raise ShapeError(f"weights {weights.shape} do not match {v_grid.n} value patches")
    out = weights @ v_grid.patches
    return PatchGrid(out, v_grid.patch_shape, v_grid.frame_grid, v_grid.visibility)


def layer_forward(f: Tensor, mask: np.ndarray, layer: TransformerLayer,
                  trace: AttentionTrace | None = None, layer_index: int = 0) -> Tensor:
    """One transformer layer on (T, c, h, w) features; ``mask`` is (T, 1, h, w)."""
    h, w = f.shape[2:]
    if np.shape(mask)[2:] != (h, w):
        raise ShapeError(f"mask {np.shape(mask)} does not match features {f.shape}")
    outputs = []
    for head, ((q, k, v), shape) in enumerate(zip(embed(f, layer), layer.head_patch_shapes)):
        vis = patch_visibility(mask, shape, layer.visibility_threshold, relax=True)
        q_grid, k_grid, v_grid = (extract_patches(x, shape) for x in (q, k, v))
        weights = attention_weights(match(q_grid, k_grid), vis)
        if trace is not None:
            trace.add(layer_index, head, weights.data, shape + (layer.head_channels,),
                      q_grid.frame_grid)
        outputs.append(reassemble(attend(weights, v_grid)))
    fused = layer.fusion(T.concat(outputs, axis=1))
    return layer.refine(fused)


def stack_forward(f: Tensor, mask: np.ndarray, layers: Sequence[TransformerLayer],
                  trace: AttentionTrace | None = None) -> Tensor:
    if len(layers) < 1:
        raise ValueError("need at least one transformer layer")
    for i, layer in enumerate(layers):
        f = layer_forward(f, mask, layer, trace, i)
    return f


def attention_flops(n_frames: int, h: int, w: int, channels: int,
                    head_patch_shapes: Sequence[tuple[int, int]], n_layers: int = 1) -> int:
    """Multiply-add FLOPs of the similarity and weighted-sum products.

    Per head: two (N x L) by (L x N)-sized products, 2*N*N*L FLOPs each.
    """
    c_head = channels // len(head_patch_shapes)
    total = 0
    for r1, r2 in head_patch_shapes:
        n = n_frames * (h // r1) * (w // r2)
        total += 2 * (2 * n * n * r1 * r2 * c_head)
    return n_layers * total


def transformer_complexity(n_frames: int, h: int, w: int, patch: tuple[int, int],
                           channels: Sequence[int], kernels: Sequence[int]) -> int:
    """Operation count of stacked transformers for a single patch size.

    ``channels`` holds C_0..C_D and ``kernels`` k_1..k_D; the first term is the
    attention products, the second the convolutions.
    """
    ph, pw = patch
    total = 0
    for layer in range(1, len(channels)):
        c_prev, c_cur, k = channels[layer - 1], channels[layer], kernels[layer - 1]
        total += 2 * (n_frames * h * w // (ph * pw)) ** 2 * (ph * pw * c_cur)
        total += n_frames * k * k * h * w * c_prev * c_cur
    return total
