"""Reconstruction and adversarial objectives."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    hole: float = 1.0
    valid: float = 1.0
    adv: float = 0.01

    def __post_init__(self):
        if min(self.hole, self.valid, self.adv) < 0:
            raise ValueError("loss weights must be nonnegative")


def _region_l1(y: Tensor, y_hat: Tensor, region: np.ndarray, name: str) -> Tensor:
    if y.shape != y_hat.shape:
        raise ShapeError(f"{name}: shapes differ {y.shape} vs {y_hat.shape}")
    # single-channel mask broadcast to every colour channel, numerator and denominator alike
    region = np.broadcast_to(region, y.shape).astype(y.dtype)
    count = float(region.sum())
    if count == 0:
        raise ValueError(f"{name}: region is empty")
    return T.scale(T.abs_sum((y - y_hat) * Tensor(region)), 1.0 / count)


def _mask_array(mask) -> np.ndarray:
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary")
    return m


def l1_hole(y: Tensor, y_hat: Tensor, mask) -> Tensor:
    """Mean absolute error over hole entries (mask == 1)."""
    return _region_l1(y, y_hat, _mask_array(mask), "l1_hole")


def l1_valid(y: Tensor, y_hat: Tensor, mask) -> Tensor:
    return _region_l1(y, y_hat, 1 - _mask_array(mask), "l1_valid")


def d_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """Hinge loss for the discriminator."""
    if real_scores.shape != fake_scores.shape:
        raise ShapeError("score maps differ in shape")
    return T.mean(T.relu(1.0 - real_scores)) + T.mean(T.relu(1.0 + fake_scores))


def g_adv_loss(fake_scores: Tensor) -> Tensor:
    return -T.mean(fake_scores)


def total_loss(parts, weights: LossWeights = LossWeights()):
    """Weighted sum of (hole, valid, adversarial) terms; works on tensors or floats."""
    hole, valid, adv = parts
    return weights.hole * hole + weights.valid * valid + weights.adv * adv


class LossLog:
    """Append-only CSV with columns step, L_hole, L_valid, L_adv, L_D."""

    columns = ("step", "L_hole", "L_valid", "L_adv", "L_D")

    def __init__(self, path: str | Path, resume: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not resume or not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.columns)

    def append(self, step: int, l_hole: float, l_valid: float, l_adv: float, l_d: float) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([step] + [f"{v:.8g}" for v in (l_hole, l_valid, l_adv, l_d)])

    def truncate(self, last_step: int) -> None:
        """Drop rows logged after ``last_step`` (e.g. past the checkpoint being resumed)."""
        rows = [r for r in self.read() if r["step"] <= last_step]
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in rows:
                w.writerow([int(r["step"])] + [f"{r[c]:.8g}" for c in self.columns[1:]])

    def read(self) -> list[dict]:
        with open(self.path, newline="") as fh:
            return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
