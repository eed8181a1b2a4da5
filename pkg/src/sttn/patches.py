"""Non-overlapping spatial patches over a stack of frames, and their visibility."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class PatchGrid:
    """Flattened patches in frame-major, then row-major grid order.

    ``patches`` is (N, L) with N = T * (h / r1) * (w / r2) and L = r1 * r2 * c;
    each row is laid out as (r1, r2, c).
    """

    patches: Tensor
    patch_shape: tuple[int, int, int]
    frame_grid: tuple[int, int, int]
    visibility: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def length(self) -> int:
        return self.patches.shape[1]


def _check_divisible(h: int, w: int, r1: int, r2: int) -> None:
    if r1 <= 0 or r2 <= 0 or h % r1 or w % r2:
        raise ShapeError(f"patch shape ({r1}, {r2}) does not tile a {h}x{w} map")


def extract_patches(features: Tensor, patch_shape: tuple[int, int]) -> PatchGrid:
    t, c, h, w = features.shape
    r1, r2 = patch_shape
    _check_divisible(h, w, r1, r2)
    gh, gw = h // r1, w // r2
    x = features.reshape(t, c, gh, r1, gw, r2).transpose(0, 2, 4, 3, 5, 1)
    patches = x.reshape(t * gh * gw, r1 * r2 * c)
    return PatchGrid(patches, (r1, r2, c), (t, gh, gw))


def reassemble(grid: PatchGrid) -> Tensor:
    """Inverse of :func:`extract_patches`: (N, L) back to (T, c, h, w)."""
    r1, r2, c = grid.patch_shape
    t, gh, gw = grid.frame_grid
    if grid.patches.shape != (t * gh * gw, r1 * r2 * c):
        raise ShapeError(f"patch matrix {grid.patches.shape} inconsistent with grid "
                         f"{grid.frame_grid} and patch shape {grid.patch_shape}")
    x = grid.patches.reshape(t, gh, gw, r1, r2, c).transpose(0, 5, 1, 3, 2, 4)
    return x.reshape(t, c, gh * r1, gw * r2)


def masked_fraction(mask: np.ndarray, patch_shape: tuple[int, int]) -> np.ndarray:
    """Fraction of hole pixels inside each patch, in grid order. ``mask`` is (T, 1, h, w)."""
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[:, None]
    t, _, h, w = mask.shape
    r1, r2 = patch_shape
    _check_divisible(h, w, r1, r2)
    blocks = mask[:, 0].reshape(t, h // r1, r1, w // r2, r2)
    return blocks.mean(axis=(2, 4)).reshape(-1)


def patch_visibility(mask: np.ndarray, patch_shape: tuple[int, int], threshold: float = 0.0,
                     relax: bool = False) -> np.ndarray:
    """Visible flag per patch: masked-pixel fraction must not exceed ``threshold``.

    With ``relax`` the threshold is raised to the least-corrupted patch's
    fraction whenever no patch would otherwise qualify (e.g. a whole-frame
    head when every frame carries a hole).
    """
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    frac = masked_fraction(mask, patch_shape)
    if relax and not (frac <= threshold).any():
        threshold = frac.min()
    return frac <= threshold


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Max-pool a (T, 1, H, W) mask so a feature pixel is a hole if any input pixel is."""
    mask = np.asarray(mask)
    t, c, h, w = mask.shape
    if h % factor or w % factor:
        raise ShapeError(f"mask {h}x{w} not divisible by {factor}")
    return mask.reshape(t, c, h // factor, factor, w // factor, factor).max(axis=(3, 5))
