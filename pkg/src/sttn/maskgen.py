"""Stationary free-form hole masks and per-frame mask ingestion.

A stationary mask is a closed contour of cubic Bezier segments through control
points placed around a random centre, filled with the even-odd rule and
repeated across every frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import read_gray, write_pgm


@dataclass(frozen=True)
class MaskSpec:
    height: int
    width: int
    max_point_num: int = 12
    max_length: float | None = None  # defaults to 0.4 * min(height, width)
    seed: int = 0
    min_length_frac: float = 0.1
    max_offset: float = 0.2
    tolerance: float = 1.0

    @property
    def length(self) -> float:
        return self.max_length if self.max_length is not None else 0.4 * min(self.height, self.width)

    def validate(self) -> "MaskSpec":
        if self.max_point_num < 3:
            raise ValueError("max_point_num must be >= 3")
        if not 0 < self.length < min(self.height, self.width):
            raise ValueError("max_length must be positive and below min(height, width)")
        return self


def bezier_points(p0, p1, p2, p3, tolerance: float = 1.0) -> np.ndarray:
    """Uniformly flatten a cubic so the chordal deviation stays below ``tolerance``."""
    p0, p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p0, p1, p2, p3))
    d = max(np.linalg.norm(p0 - 2 * p1 + p2), np.linalg.norm(p1 - 2 * p2 + p3))
    # uniform subdivision error bound: 3/4 * d / n^2
    n = max(2, int(np.ceil(np.sqrt(0.75 * d / tolerance))))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    s = 1 - t
    return s ** 3 * p0 + 3 * s * s * t * p1 + 3 * s * t * t * p2 + t ** 3 * p3


def _segment(a, b, rng: np.random.Generator, max_offset: float, tolerance: float) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    chord = b - a
    length = np.linalg.norm(chord)
    normal = np.array([-chord[1], chord[0]]) / length if length > 0 else np.zeros(2)
    o1, o2 = rng.uniform(-max_offset, max_offset, size=2) * length
    c1 = a + chord / 3 + o1 * normal
    c2 = a + 2 * chord / 3 + o2 * normal
    return bezier_points(a, c1, c2, b, tolerance)


def stationary_contour(spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Closed polyline (x, y) in pixel coordinates; first point repeated at the end."""
    spec.validate()
    point_num = int(rng.integers(3, spec.max_point_num + 1))
    cx = rng.uniform(0, spec.width)
    cy = rng.uniform(0, spec.height)
    angles = np.linspace(0, 2 * np.pi, point_num)
    lengths = rng.uniform(spec.min_length_frac * spec.length, spec.length, size=point_num)
    pts = np.stack([cx + np.sin(angles) * lengths, cy + np.cos(angles) * lengths], axis=1)
    pieces = []
    for i in range(point_num):
        seg = _segment(pts[i], pts[(i + 1) % point_num], rng, spec.max_offset, spec.tolerance)
        pieces.append(seg[:-1])
    pieces.append(pts[:1])
    return np.concatenate(pieces)


def fill_polygon(poly: np.ndarray, height: int, width: int, origin=(0, 0)) -> np.ndarray:
    """Even-odd scanline fill of pixel centres; ``origin`` is the (x, y) of pixel (0, 0).

    A crossing at x toggles parity for every pixel whose centre lies at or right
    of x; accumulated parity along each row gives the interior.
    """
    x0, y0 = poly[:-1, 0] - origin[0], poly[:-1, 1] - origin[1]
    x1, y1 = poly[1:, 0] - origin[0], poly[1:, 1] - origin[1]
    ys = np.arange(height, dtype=float)
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    # half-open rule [lo, hi) avoids double-counting shared vertices
    hit = (ys[:, None] >= lo[None, :]) & (ys[:, None] < hi[None, :])
    rows, edges = np.nonzero(hit)
    if rows.size == 0:
        return np.zeros((height, width), dtype=np.uint8)
    t = (ys[rows] - y0[edges]) / (y1[edges] - y0[edges])
    xc = x0[edges] + t * (x1[edges] - x0[edges])
    cols = np.clip(np.ceil(xc).astype(np.int64), 0, width)
    toggles = np.zeros((height, width + 1), dtype=np.int64)
    np.add.at(toggles, (rows, cols), 1)
    return (np.cumsum(toggles[:, :width], axis=1) & 1).astype(np.uint8)


def trace_boundary(poly: np.ndarray, height: int, width: int, origin=(0, 0), step: float = 0.2) -> np.ndarray:
    """Every pixel cell the polyline passes through (corner-to-corner moves mark
    both corner cells, so the trace is 4-connected)."""
    pts = [poly[:1]]
    for a, b in zip(poly[:-1], poly[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
        t = np.linspace(0, 1, n + 1)[1:, None]
        pts.append(a + t * (b - a))
    pts = np.concatenate(pts) - np.asarray(origin, float)
    cells = np.floor(pts + 0.5).astype(np.int64)  # pixel centres at integers
    out = np.zeros((height, width), dtype=bool)

    def mark(cx, cy):
        ok = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        out[cy[ok], cx[ok]] = True

    mark(cells[:, 0], cells[:, 1])
    prev, cur = cells[:-1], cells[1:]
    diag = (prev[:, 0] != cur[:, 0]) & (prev[:, 1] != cur[:, 1])
    mark(prev[diag, 0], cur[diag, 1])
    mark(cur[diag, 0], prev[diag, 1])
    return out


def rasterize_contour(poly: np.ndarray, height: int, width: int) -> np.ndarray:
    """Filled (H, W) uint8 mask of a closed contour.

    The contour is filled on a canvas that contains all of it, pockets cut off
    by self-crossings are flood-filled, and the frame is cropped out.
    """
    x0 = int(np.floor(min(poly[:, 0].min(), 0))) - 1
    y0 = int(np.floor(min(poly[:, 1].min(), 0))) - 1
    x1 = int(np.ceil(max(poly[:, 0].max(), width - 1))) + 2
    y1 = int(np.ceil(max(poly[:, 1].max(), height - 1))) + 2
    canvas = fill_polygon(poly, y1 - y0, x1 - x0, origin=(x0, y0)).astype(bool)
    canvas = ndimage.binary_fill_holes(canvas)
    return canvas[-y0:-y0 + height, -x0:-x0 + width].astype(np.uint8)


def generate_stationary_mask(spec: MaskSpec, rng: np.random.Generator | None = None,
                             max_tries: int = 100) -> np.ndarray:
    """(H, W) uint8 mask of 0/1; resamples degenerate (empty) contours."""
    spec.validate()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    for _ in range(max_tries):
        poly = stationary_contour(spec, rng)
        mask = rasterize_contour(poly, spec.height, spec.width)
        if mask.any():
            return mask
    raise RuntimeError("could not draw a non-empty mask")


def stationary_video_masks(spec: MaskSpec, n_frames: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """(T, 1, H, W) float mask, the same shape in every frame."""
    mask = generate_stationary_mask(spec, rng).astype(np.float32)
    return np.repeat(mask[None, None], n_frames, axis=0)


def mask_seeds(seed: int, count: int) -> list[int]:
    """Independent per-mask seeds derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def save_mask_pgm(mask: np.ndarray, path: str | Path) -> None:
    write_pgm(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def load_moving_masks(directory: str | Path, n_frames: int | None = None,
                      size: tuple[int, int] | None = None) -> np.ndarray:
    """Read one grayscale image per frame (sorted by name), binarised at 127."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".pgm", ".png") and not p.name.startswith("."))
    if n_frames is not None and len(files) != n_frames:
        raise ValueError(f"{len(files)} mask files for {n_frames} frames")
    masks = []
    for p in files:
        img = read_gray(p)
        if size is not None and img.shape != tuple(size):
            raise ValueError(f"{p.name}: mask size {img.shape} != frame size {tuple(size)}")
        masks.append((img > 127).astype(np.float32))
    if not masks:
        raise ValueError(f"no mask images in {directory}")
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError("mask images differ in size")
    return np.stack(masks)[:, None]
