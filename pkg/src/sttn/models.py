"""Generator (frame encoder, transformer stack, frame decoder) and T-PatchGAN
discriminator, plus the binary checkpoint format."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import Config
from .imageio import atomic_write_bytes
from .nn import Conv2d, Module, SNConv3d
from .patches import downsample_mask
from .tensor import ShapeError, Tensor
from .transformer import AttentionTrace, TransformerLayer, stack_forward


class Generator(Module):
    def __init__(self, cfg: Config, rng: np.random.Generator | None = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dtype = dtype or cfg.dtype
        self.slope = cfg.leaky_slope
        e1, e2, e3, e4 = cfg.enc_channels
        d1, d2, d3 = cfg.dec_channels
        self.encoder = [
            Conv2d(cfg.in_channels, e1, 3, stride=2, rng=rng, dtype=dtype),
            Conv2d(e1, e2, 3, stride=1, rng=rng, dtype=dtype),
            Conv2d(e2, e3, 3, stride=2, rng=rng, dtype=dtype),
            Conv2d(e3, e4, 3, stride=1, rng=rng, dtype=dtype),
        ]
        self.transformers = [
            TransformerLayer(e4, cfg.head_patch_shapes, rng=rng, dtype=dtype,
                             visibility_threshold=cfg.visibility_threshold)
            for _ in range(cfg.n_layers)
        ]
        # an upsample precedes decoder[0] and decoder[2]
        self.decoder = [
            Conv2d(e4, d1, 3, rng=rng, dtype=dtype),
            Conv2d(d1, d2, 3, rng=rng, dtype=dtype),
            Conv2d(d2, d3, 3, rng=rng, dtype=dtype),
            Conv2d(d3, 3, 3, rng=rng, dtype=dtype),
        ]

    def encode(self, x: Tensor) -> Tensor:
        for conv in self.encoder:
            x = T.leaky_relu(conv(x), self.slope)
        return x

    def decode(self, f: Tensor) -> Tensor:
        x = T.upsample_bilinear(f, 2)
        x = T.leaky_relu(self.decoder[0](x), self.slope)
        x = T.leaky_relu(self.decoder[1](x), self.slope)
        x = T.upsample_bilinear(x, 2)
        x = T.leaky_relu(self.decoder[2](x), self.slope)
        return T.tanh(self.decoder[3](x))

    def forward(self, frames: Tensor, masks: np.ndarray, trace: AttentionTrace | None = None) -> Tensor:
        return generator_forward(self, frames, masks, trace)


def generator_forward(gen: Generator, frames: Tensor, masks, trace: AttentionTrace | None = None) -> Tensor:
    """Complete every frame of a hole-zeroed clip.

    ``frames`` is (T, 3, H, W) in [-1, 1] with holes already zeroed; ``masks``
    is (T, 1, H, W) with 1 marking holes. Returns the raw (uncomposited) output.
    """
    masks = np.asarray(masks.data if isinstance(masks, Tensor) else masks)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ShapeError(f"frames must be (T, 3, H, W), got {frames.shape}")
    if masks.shape != (frames.shape[0], 1) + frames.shape[2:]:
        raise ShapeError(f"masks {masks.shape} do not match frames {frames.shape}")
    h, w = frames.shape[2:]
    if h % 4 or w % 4:
        raise ShapeError(f"frame size {h}x{w} must be divisible by 4")
    x = T.concat([frames, Tensor(masks.astype(frames.dtype))], axis=1)
    feats = gen.encode(x)
    feats = stack_forward(feats, downsample_mask(masks, 4), gen.transformers, trace)
    return gen.decode(feats)


def composite(output: Tensor, frames: Tensor, masks) -> Tensor:
    """Generated content inside holes, input content elsewhere."""
    m = Tensor(np.asarray(masks.data if isinstance(masks, Tensor) else masks, dtype=output.dtype))
    return output * m + frames * (1.0 - m)


class Discriminator(Module):
    """Six spectrally normalised 3x5x5 convolutions with (1, 2, 2) strides."""

    def __init__(self, cfg: Config, rng: np.random.Generator | None = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
        dtype = dtype or cfg.dtype
        self.slope = cfg.leaky_slope
        chans = (3,) + tuple(cfg.disc_channels)
        self.layers = [
            SNConv3d(chans[i], chans[i + 1], (3, 5, 5), stride=(1, 2, 2), padding=(1, 2, 2),
                     rng=rng, dtype=dtype)
            for i in range(6)
        ]

    def set_power_iteration(self, enabled: bool) -> None:
        for layer in self.layers:
            layer.update_u = enabled

    def forward(self, video: Tensor) -> Tensor:
        return discriminator_forward(self, video)


def discriminator_forward(disc: Discriminator, video: Tensor) -> Tensor:
    """Score map for a (B, 3, T, H, W) clip; spatial dims shrink by 64, time is kept."""
    if video.ndim != 5 or video.shape[1] != 3:
        raise ShapeError(f"discriminator input must be (B, 3, T, H, W), got {video.shape}")
    if video.shape[2] < 3:
        raise ShapeError("discriminator needs at least 3 frames")
    x = video
    for i, layer in enumerate(disc.layers):
        x = layer(x)
        if i < len(disc.layers) - 1:
            x = T.leaky_relu(x, disc.slope)
    return x


def to_video(frames: Tensor) -> Tensor:
    """(T, C, H, W) -> (1, C, T, H, W)."""
    return frames.transpose(1, 0, 2, 3).reshape((1,) + tuple(frames.shape[i] for i in (1, 0, 2, 3)))


# -- checkpoints ---------------------------------------------------------------------

MAGIC = b"STTNCKPT"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.uint8, 3: np.int64}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, digest: str, blobs: dict[str, np.ndarray]) -> None:
    """Write a checkpoint atomically.

    Layout (little endian): 8-byte magic ``STTNCKPT``, u32 version, 32-byte
    SHA-256 config digest, u32 entry count, then per entry: u16 name length,
    UTF-8 name, u8 dtype code (0 f32, 1 f64, 2 u8, 3 i64), u8 rank, u64 per
    extent, u64 byte count, raw C-order data.
    """
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", VERSION), bytes.fromhex(digest), struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        parts.append(struct.pack("<Q", len(data)) + data)
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path: str | Path, expected_digest: str | None = None) -> tuple[str, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = buf[12:44].hex()
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError("config digest mismatch: checkpoint was written for another config")
    (count,) = struct.unpack_from("<I", buf, 44)
    pos = 48
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode()
        pos += n
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        (nbytes,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        blobs[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                    offset=pos).reshape(shape).astype(_DTYPES[code])
        pos += nbytes
    return digest, blobs


def module_state(module: Module, prefix: str) -> dict[str, np.ndarray]:
    state = {f"{prefix}/{name}": p.data for name, p in module.named_parameters()}
    if isinstance(module, Discriminator):
        for i, layer in enumerate(module.layers):
            state[f"{prefix}/layers.{i}.sn_u"] = layer.sn_state.u
    return state


def load_module_state(module: Module, prefix: str, blobs: dict[str, np.ndarray]) -> None:
    for name, p in module.named_parameters():
        key = f"{prefix}/{name}"
        if key not in blobs:
            raise CheckpointError(f"checkpoint lacks {key}")
        if blobs[key].shape != p.shape:
            raise CheckpointError(f"{key}: shape {blobs[key].shape} != {p.shape}")
        p.data[...] = blobs[key]
    if isinstance(module, Discriminator):
        for i, layer in enumerate(module.layers):
            key = f"{prefix}/layers.{i}.sn_u"
            if key in blobs:
                layer.sn_state.u = blobs[key].astype(np.float64)


def json_blob(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8).copy()


def read_json_blob(arr: np.ndarray):
    return json.loads(arr.tobytes().decode())
