"""Synthetic moving-sprite videos with exact optical flow, and frame sampling.

Backgrounds are static. Each sprite is a flat-shaded rectangle or ellipse
carrying a linear colour ramp in its own coordinates, so translating it is
reproduced exactly by bilinear warping wherever the sampled neighbourhood
stays on the same layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import FlowField


@dataclass
class Sprite:
    shape: str                  # "rect" | "ellipse"
    half_size: tuple[float, float]  # (hx, hy)
    color: np.ndarray           # (3,) base colour at the sprite centre
    ramp: np.ndarray            # (2, 3) colour change per pixel along x and y
    start: np.ndarray           # (2,) centre at frame 0
    velocity: np.ndarray        # (2,) px / frame
    trajectory: str = "linear"  # "linear" | "sinusoidal"
    amplitude: float = 0.0
    omega: float = 0.0


@dataclass
class SyntheticSceneSpec:
    height: int = 36
    width: int = 64
    n_frames: int = 20
    background: str = "gradient"   # "gradient" | "texture"
    sprites: list[Sprite] | None = None  # explicit sprites; random when None
    n_sprites: int = 2
    max_velocity: float = 3.0
    boundary: str = "bounce"       # "bounce" | "wrap"
    seed: int = 0

    def validate(self) -> "SyntheticSceneSpec":
        if self.max_velocity > 4:
            raise ValueError("sprite velocity is limited to 4 px/frame")
        if self.background not in ("gradient", "texture"):
            raise ValueError(f"unknown background {self.background!r}")
        if self.boundary not in ("bounce", "wrap"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if self.n_frames < 1 or self.height < 4 or self.width < 4:
            raise ValueError("clip too small")
        return self


@dataclass
class Clip:
    frames: np.ndarray     # (T, H, W, 3) in [0, 1]
    flows: FlowField
    layers: np.ndarray     # (T, H, W) int: 0 background, k sprite k-1
    positions: np.ndarray  # (T, K, 2) sprite centres
    meta: dict = field(default_factory=dict)


# -- scene construction ---------------------------------------------------------------

def _background(spec: SyntheticSceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.background == "gradient":
        a, b = rng.uniform(0.1, 0.9, size=(2, 3))
        theta = rng.uniform(0, 2 * np.pi)
        s = xs * np.cos(theta) + ys * np.sin(theta)
        s = (s - s.min()) / max(s.max() - s.min(), 1e-9)
        return a + (b - a) * s[..., None]
    base = rng.uniform(0.3, 0.7, size=3)
    img = np.broadcast_to(base, (h, w, 3)).copy()
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi / np.array([w, h])
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.08, size=3)
        img += amp * np.sin(fx * xs + fy * ys + phase)[..., None]
    return np.clip(img, 0.0, 1.0)


def random_sprite(spec: SyntheticSceneSpec, rng: np.random.Generator) -> Sprite:
    h, w = spec.height, spec.width
    scale = min(h, w)
    hx, hy = rng.uniform(0.08, 0.2, size=2) * scale
    hx, hy = max(hx, 2.0), max(hy, 2.0)
    color = rng.uniform(0.2, 0.8, size=3)
    ramp = rng.uniform(-1, 1, size=(2, 3)) * (0.12 / max(hx, hy))
    start = np.array([rng.uniform(hx, w - 1 - hx), rng.uniform(hy, h - 1 - hy)])
    trajectory = "sinusoidal" if rng.random() < 0.3 else "linear"
    speed = rng.uniform(0.5, 1.0) * spec.max_velocity
    angle = rng.uniform(0, 2 * np.pi)
    amplitude = omega = 0.0
    if trajectory == "sinusoidal":
        # |d/dt| <= speed_lin + amplitude*omega <= max_velocity
        omega = rng.uniform(0.3, 0.8)
        amplitude = rng.uniform(0.5, 1.0) * 0.4 * spec.max_velocity / omega
        speed = 0.6 * speed
    velocity = speed * np.array([np.cos(angle), np.sin(angle)])
    shape = "rect" if rng.random() < 0.5 else "ellipse"
    return Sprite(shape, (float(hx), float(hy)), color, ramp, start, velocity, trajectory,
                  float(amplitude), float(omega))


def _fold(x: np.ndarray, lo: float, hi: float, mode: str) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.full_like(x, lo)
    if mode == "wrap":
        return lo + np.mod(x - lo, span)
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def sprite_positions(sprite: Sprite, n_frames: int, height: int, width: int, boundary: str) -> np.ndarray:
    t = np.arange(n_frames, dtype=np.float64)[:, None]
    pos = sprite.start + sprite.velocity * t
    if sprite.trajectory == "sinusoidal":
        v = sprite.velocity
        perp = np.array([-v[1], v[0]]) / max(np.linalg.norm(v), 1e-9)
        pos = pos + sprite.amplitude * np.sin(sprite.omega * t) * perp
    hx, hy = sprite.half_size
    pos[:, 0] = _fold(pos[:, 0], hx, width - 1 - hx, boundary)
    pos[:, 1] = _fold(pos[:, 1], hy, height - 1 - hy, boundary)
    return pos


def _coverage(sprite: Sprite, centre: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    hx, hy = sprite.half_size
    dx, dy = xs - centre[0], ys - centre[1]
    if sprite.shape == "rect":
        return (np.abs(dx) <= hx) & (np.abs(dy) <= hy)
    return (dx / hx) ** 2 + (dy / hy) ** 2 <= 1.0


def generate_clip(spec: SyntheticSceneSpec) -> Clip:
    """Render a clip together with per-pair ground-truth flow and validity."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w, n = spec.height, spec.width, spec.n_frames
    bg = _background(spec, rng)
    sprites = spec.sprites if spec.sprites is not None else [
        random_sprite(spec, rng) for _ in range(spec.n_sprites)]
    positions = np.stack([sprite_positions(s, n, h, w, spec.boundary) for s in sprites], axis=1) \
        if sprites else np.zeros((n, 0, 2))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((n, h, w, 3))
    layers = np.zeros((n, h, w), dtype=np.int64)
    for t in range(n):
        img = bg.copy()
        for k, s in enumerate(sprites):
            c = positions[t, k]
            cov = _coverage(s, c, xs, ys)
            shade = s.color + (xs - c[0])[..., None] * s.ramp[0] + (ys - c[1])[..., None] * s.ramp[1]
            img[cov] = shade[cov]
            layers[t][cov] = k + 1
        frames[t] = img
    flows = _flows(positions, layers, spec.boundary)
    if not (frames.min() >= 0.0 and frames.max() <= 1.0):
        frames = np.clip(frames, 0.0, 1.0)
    return Clip(frames, flows, layers, positions,
                {"seed": spec.seed, "background": spec.background, "n_sprites": len(sprites)})


def _flows(positions: np.ndarray, layers: np.ndarray, boundary: str) -> FlowField:
    n, h, w = layers.shape
    flow = np.zeros((max(n - 1, 0), h, w, 2))
    valid = np.zeros((max(n - 1, 0), h, w), dtype=bool)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for t in range(n - 1):
        disp = np.concatenate([np.zeros((1, 2)), positions[t + 1] - positions[t]])
        lay = layers[t + 1]
        f = disp[lay]
        if boundary == "wrap":
            # a wrap jump is not a motion; such pixels stay invalid below
            jump = np.abs(disp).max(axis=1) > 4 + 1e-9
            f[jump[lay]] = 0.0
        flow[t] = f
        sx, sy = xs - f[..., 0], ys - f[..., 1]
        x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
        ok = (x0 >= 0) & (y0 >= 0) & (x0 + 1 < w) & (y0 + 1 < h)
        x0c, y0c = np.clip(x0, 0, w - 2), np.clip(y0, 0, h - 2)
        prev = layers[t]
        same = (prev[y0c, x0c] == lay) & (prev[y0c, x0c + 1] == lay) \
            & (prev[y0c + 1, x0c] == lay) & (prev[y0c + 1, x0c + 1] == lay)
        v = ok & same
        if boundary == "wrap":
            v &= ~jump[lay]
        valid[t] = v
    return FlowField(flow, valid)


def random_scene(rng: np.random.Generator, height: int, width: int, n_frames: int,
                 max_sprites: int = 3, max_velocity: float = 3.0) -> SyntheticSceneSpec:
    return SyntheticSceneSpec(
        height=height, width=width, n_frames=n_frames,
        background="gradient" if rng.random() < 0.5 else "texture",
        n_sprites=int(rng.integers(1, max_sprites + 1)), max_velocity=max_velocity,
        seed=int(rng.integers(0, 2 ** 31 - 1)))


# -- frame sampling ---------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingPlan:
    """Neighbours within ``radius`` of ``target`` plus every ``rate``-th frame.

    Indices are 1-based. Distant frames are {1, 1+s, 1+2s, ...} minus the
    neighbour window; ``include_distant=False`` keeps neighbours only.
    """

    target: int
    radius: int
    rate: int
    n_frames: int
    include_distant: bool = True

    def __post_init__(self):
        if not 1 <= self.target <= self.n_frames:
            raise ValueError(f"target {self.target} outside 1..{self.n_frames}")
        if self.radius < 0 or self.rate < 1:
            raise ValueError("radius must be >= 0 and rate >= 1")

    def neighbors(self) -> list[int]:
        lo, hi = max(1, self.target - self.radius), min(self.n_frames, self.target + self.radius)
        return list(range(lo, hi + 1))

    def distant(self) -> list[int]:
        if not self.include_distant:
            return []
        near = set(self.neighbors())
        return [i for i in range(1, self.n_frames + 1, self.rate) if i not in near]

    def indices(self) -> list[int]:
        return self.neighbors() + self.distant()


def build_batch(video: np.ndarray, masks: np.ndarray, plan: SamplingPlan):
    """Select (neighbours, then distant) frames and the aligned masks.

    Returns (frames, masks, zero-based indices).
    """
    idx = [i - 1 for i in plan.indices()]
    if not idx:
        raise ValueError("sampling plan selects no frames")
    if len(video) != plan.n_frames or len(masks) != plan.n_frames:
        raise ValueError("video/masks length does not match the plan")
    return video[idx], masks[idx], idx


def sample_training_indices(rng: np.random.Generator, n_video: int, n_clip: int = 5) -> list[int]:
    """Zero-based frame indices: a consecutive run or a sorted random subset, equally likely."""
    if n_video < n_clip:
        raise ValueError(f"video has {n_video} frames, need {n_clip}")
    if rng.random() < 0.5:
        start = int(rng.integers(0, n_video - n_clip + 1))
        return list(range(start, start + n_clip))
    return sorted(int(i) for i in rng.choice(n_video, size=n_clip, replace=False))
