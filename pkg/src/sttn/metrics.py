"""PSNR, SSIM and flow warping error for videos in [0, 1]."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0


@dataclass
class FlowField:
    """Motion between consecutive frames.

    ``flow[t]`` lives on the pixel grid of frame t+1 and holds, in pixels
    (dx, dy), how far the content there moved since frame t; that content sits
    at ``p - flow[t](p)`` in frame t. ``valid[t]`` flags pixels whose source is
    visible (not occluded, inside the frame).
    """

    flow: np.ndarray   # (T-1, H, W, 2)
    valid: np.ndarray  # (T-1, H, W) bool

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.flow.shape[:-1] != self.valid.shape or self.flow.shape[-1] != 2:
            raise ValueError("flow must be (P, H, W, 2) with a matching (P, H, W) validity mask")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow contains non-finite displacements")

    def __len__(self) -> int:
        return self.flow.shape[0]


def psnr(y: np.ndarray, y_hat: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio for unit peak; optionally over masked entries only."""
    y, y_hat = np.asarray(y, np.float64), np.asarray(y_hat, np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shapes differ: {y.shape} vs {y_hat.shape}")
    err = (y - y_hat) ** 2
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, bool), err.shape)
        if not m.any():
            raise ValueError("empty evaluation region")
        err = err[m]
    # exact summation, so the result does not depend on the element order or count
    mse = math.fsum(err.ravel()) / err.size
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def to_luma(frames: np.ndarray) -> np.ndarray:
    """BT.601 luminance of (..., H, W, 3) frames; grayscale input passes through."""
    frames = np.asarray(frames, np.float64)
    if frames.shape[-1] == 3:
        return frames @ np.array([0.299, 0.587, 0.114])
    return frames


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    out = correlate1d(img, win, axis=-2, mode="constant")
    out = correlate1d(out, win, axis=-1, mode="constant")
    r = len(win) // 2
    return out[..., r:img.shape[-2] - r, r:img.shape[-1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM of single-channel images (..., H, W) with Gaussian weighting.

    Only windows fully inside the image are kept.
    """
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    win = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a ** 2
    var_b = _filter_valid(b * b, win) - mu_b ** 2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(y: np.ndarray, y_hat: np.ndarray, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         sigma: float = 1.5) -> float:
    """Mean SSIM over frames of (T, H, W, 3) or (T, H, W) videos (a single frame also works)."""
    ly, lh = to_luma(y), to_luma(y_hat)
    if ly.shape != lh.shape:
        raise ValueError(f"shapes differ: {ly.shape} vs {lh.shape}")
    return float(ssim_map(ly, lh, window, sigma, k1, k2).mean())


def luminance_term(mu1: float, mu2: float, k1: float = 0.01, data_range: float = 1.0) -> float:
    c1 = (k1 * data_range) ** 2
    return (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample (H, W, C) ``img`` at float coordinates; returns (values, inside)."""
    h, w = img.shape[:2]
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc, yc = np.clip(x, 0, w - 1), np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2 if h > 1 else 0)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (xc - x0)[..., None], (yc - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy, inside


def warp_previous(prev: np.ndarray, flow: np.ndarray):
    """Pull frame t onto frame t+1's grid along ``flow``; returns (warped, inside)."""
    h, w = prev.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return bilinear_sample(prev, xs - flow[..., 0], ys - flow[..., 1])


def warping_error(video: np.ndarray, flows: FlowField) -> float:
    """Mean over valid pixels of the L1 norm (summed over channels) between each
    frame and its predecessor warped by the flow."""
    video = np.asarray(video, np.float64)
    if video.ndim == 3:
        video = video[..., None]
    if len(flows) != video.shape[0] - 1:
        raise ValueError(f"{len(flows)} flow fields for {video.shape[0]} frames")
    total, count = 0.0, 0
    for t in range(len(flows)):
        warped, inside = warp_previous(video[t], flows.flow[t])
        valid = flows.valid[t] & inside
        diff = np.abs(video[t + 1] - warped).sum(axis=-1)
        total += float(diff[valid].sum())
        count += int(valid.sum())
    return total / count if count else 0.0
