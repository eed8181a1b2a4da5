"""Flat key-value configuration shared by the model, data and training code.

File format: one ``key = value`` pair per line, ``#`` starts a comment.
Lists are comma separated; patch shapes are written ``RxC`` (rows x cols),
e.g. ``head_patch_shapes = 9x16, 3x4, 3x2, 1x1``. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # frames
    frame_height: int = 36
    frame_width: int = 64
    # generator
    in_channels: int = 4
    enc_channels: tuple[int, ...] = (16, 32, 32, 64)
    dec_channels: tuple[int, ...] = (32, 16, 16)
    n_layers: int = 2
    head_patch_shapes: tuple[tuple[int, int], ...] = ((9, 16), (3, 4), (3, 2), (1, 1))
    visibility_threshold: float = 0.0
    leaky_slope: float = 0.2
    # discriminator
    disc_channels: tuple[int, ...] = (16, 32, 32, 32, 32, 32)
    # sampling
    clip_frames: int = 5
    temporal_radius: int = 2
    sample_rate: int = 10
    no_distant: bool = False
    # losses
    lambda_hole: float = 1.0
    lambda_valid: float = 1.0
    lambda_adv: float = 0.01
    # optimisation
    lr: float = 3e-4
    lr_decay_step: int = 1500
    lr_decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 2000
    batch_size: int = 1
    seed: int = 0
    precision: int = 32
    checkpoint_every: int = 500
    # synthetic data
    video_frames: int = 20
    max_sprites: int = 3
    max_velocity: float = 3.0
    # masks
    mask_max_points: int = 12
    mask_max_length: float = 0.4

    @classmethod
    def full_size(cls, **overrides) -> "Config":
        """Full-size architecture (432x240 frames, 8 layers, wide channels)."""
        base = dict(
            frame_height=240, frame_width=432,
            enc_channels=(64, 64, 128, 256), dec_channels=(128, 64, 64),
            n_layers=8, head_patch_shapes=((60, 108), (20, 36), (10, 18), (5, 9)),
            disc_channels=(64, 128, 256, 256, 256, 256),
            lr=1e-4, lr_decay_step=150_000, batch_size=8, steps=450_000,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def toy(cls, **overrides) -> "Config":
        return cls(**overrides)

    # -- derived ---------------------------------------------------------------
    @property
    def feature_size(self) -> tuple[int, int]:
        return self.frame_height // 4, self.frame_width // 4

    @property
    def channels(self) -> int:
        return self.enc_channels[-1]

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == 32 else np.float64

    def validate(self) -> "Config":
        h, w = self.frame_height, self.frame_width
        if h % 4 or w % 4:
            raise ConfigError(f"frame size {h}x{w} must be divisible by 4")
        if len(self.enc_channels) != 4 or len(self.dec_channels) != 3:
            raise ConfigError("enc_channels needs 4 entries and dec_channels 3")
        if len(self.disc_channels) != 6:
            raise ConfigError("disc_channels needs 6 entries")
        fh, fw = self.feature_size
        if self.channels % len(self.head_patch_shapes):
            raise ConfigError("feature channels must divide evenly across heads")
        for r1, r2 in self.head_patch_shapes:
            if fh % r1 or fw % r2:
                raise ConfigError(f"head patch {r1}x{r2} does not tile the {fh}x{fw} feature map")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if min(self.lambda_hole, self.lambda_valid, self.lambda_adv) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.n_layers < 1 or self.clip_frames < 1 or self.temporal_radius < 0 or self.sample_rate < 1:
            raise ConfigError("n_layers, clip_frames, sample_rate must be positive")
        if self.mask_max_points < 3:
            raise ConfigError("mask_max_points must be at least 3")
        return self

    # -- serialisation -------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def with_overrides(self, items: dict[str, str]) -> "Config":
        known = {f.name: f for f in fields(self)}
        kw = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key}")
            kw[key] = _parse(known[key], raw)
        return dataclasses.replace(self, **kw).validate()


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a}x{b}" for a, b in value)
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(f: dataclasses.Field, raw: str) -> Any:
    raw = raw.strip()
    kind = f.type
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw.replace("_", ""))
        if kind == "float":
            return float(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in raw.split(","))
        if kind == "tuple[tuple[int, int], ...]":
            return tuple(tuple(int(p) for p in item.strip().lower().split("x"))
                         for item in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
    raise ConfigError(f"unsupported field type {kind}")


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        pairs[key] = value
    return pairs


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None,
                base: Config | None = None) -> Config:
    cfg = base if base is not None else Config()
    items: dict[str, str] = {}
    if path is not None:
        items.update(parse_pairs(Path(path).read_text()))
    if overrides:
        items.update(overrides)
    return cfg.with_overrides(items)


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(cfg.to_text())
