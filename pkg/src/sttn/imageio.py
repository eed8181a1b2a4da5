"""PNG frames and PGM masks/heatmaps, plus the on-disk dataset layout.

Layout::

    <root>/<video_id>/frames/00000.png   RGB frames, 8 bit
    <root>/<video_id>/masks/00000.pgm    0 = known, 255 = hole
    <root>/<video_id>/flows.npz          optional: flow (T-1, H, W, 2), valid (T-1, H, W)
"""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write through a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Binary (P5) 8-bit PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are single channel")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    atomic_write_bytes(Path(path), header + img.tobytes())


def read_gray(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale image; colour images are rejected."""
    with Image.open(path) as im:
        if im.mode not in ("L", "1"):
            raise ValueError(f"{path}: expected a grayscale image, got mode {im.mode}")
        return np.asarray(im.convert("L"))


def write_png(path: str | Path, frame: np.ndarray) -> None:
    """Save an (H, W, 3) frame with values in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(Path(path), buf.getvalue())


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_frames(directory: str | Path) -> np.ndarray:
    """(T, H, W, 3) array in [0, 1] from the sorted PNG files of a directory."""
    files = sorted(p for p in Path(directory).glob("*.png") if not p.name.startswith("."))
    if not files:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = [read_png(p) for p in files]
    if len({f.shape for f in frames}) != 1:
        raise ValueError(f"frames in {directory} differ in size")
    return np.stack(frames)


def write_frames(directory: str | Path, frames: np.ndarray) -> None:
    for i, frame in enumerate(frames):
        write_png(Path(directory) / f"{i:05d}.png", frame)


def write_masks(directory: str | Path, masks: np.ndarray) -> None:
    """``masks`` is (T, 1, H, W) or (T, H, W) with 1 marking holes."""
    masks = np.asarray(masks)
    if masks.ndim == 4:
        masks = masks[:, 0]
    for i, m in enumerate(masks):
        write_pgm(Path(directory) / f"{i:05d}.pgm", (m > 0.5).astype(np.uint8) * 255)


def list_videos(root: str | Path) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if (p / "frames").is_dir())
