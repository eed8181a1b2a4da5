"""Adversarial training loop, held-out evaluation and sliding-window inference."""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import Config
from .data import SamplingPlan, generate_clip, random_scene, sample_training_indices
from .losses import LossLog, LossWeights, d_loss, g_adv_loss, l1_hole, l1_valid, total_loss
from .maskgen import MaskSpec, stationary_video_masks
from .metrics import psnr
from .models import (Discriminator, Generator, composite, json_blob, load_checkpoint,
                     load_module_state, module_state, read_json_blob, save_checkpoint, to_video)
from .nn import Module
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}/m.{i}"] = m
            out[f"{prefix}/v.{i}"] = v
        return out

    def load(self, prefix: str, blobs: dict[str, np.ndarray]) -> None:
        self.t = int(blobs[f"{prefix}/t"][0])
        for i in range(len(self.params)):
            self.m[i][...] = blobs[f"{prefix}/m.{i}"]
            self.v[i][...] = blobs[f"{prefix}/v.{i}"]


def learning_rate(cfg: Config, step: int) -> float:
    """Step decay: ``lr * factor ** floor((step - 1) / decay_step)`` for 1-based steps."""
    return cfg.lr * cfg.lr_decay_factor ** ((step - 1) // cfg.lr_decay_step)


# -- data stream -----------------------------------------------------------------------

def to_model_range(frames01: np.ndarray, dtype) -> np.ndarray:
    """(T, H, W, 3) in [0, 1] -> (T, 3, H, W) in [-1, 1]."""
    return (np.transpose(frames01, (0, 3, 1, 2)) * 2.0 - 1.0).astype(dtype)


def to_unit_range(frames: np.ndarray) -> np.ndarray:
    """(T, 3, H, W) in [-1, 1] -> (T, H, W, 3) in [0, 1]."""
    return np.clip((np.transpose(frames, (0, 2, 3, 1)) + 1.0) / 2.0, 0.0, 1.0)


def mask_spec(cfg: Config, seed: int = 0) -> MaskSpec:
    return MaskSpec(cfg.frame_height, cfg.frame_width, cfg.mask_max_points,
                    cfg.mask_max_length * min(cfg.frame_height, cfg.frame_width), seed)


def sample_training_clip(rng: np.random.Generator, cfg: Config):
    """One (frames, masks) pair: frames (T, 3, H, W) in [-1, 1], masks (T, 1, H, W)."""
    scene = random_scene(rng, cfg.frame_height, cfg.frame_width, cfg.video_frames,
                         cfg.max_sprites, cfg.max_velocity)
    clip = generate_clip(scene)
    idx = sample_training_indices(rng, cfg.video_frames, cfg.clip_frames)
    frames = to_model_range(clip.frames[idx], cfg.dtype)
    masks = stationary_video_masks(mask_spec(cfg), cfg.clip_frames, rng).astype(cfg.dtype)
    return frames, masks


class ClipStream:
    """Training clips from a dedicated generator, optionally prefetched on a thread.

    The clip sequence depends only on the seed, so prefetching does not change
    results.
    """

    def __init__(self, cfg: Config, seed: int, prefetch: int = 0, state: dict | None = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        if state is not None:
            self.rng.bit_generator.state = state
        self.prefetch = prefetch
        # generator state right after the last clip handed out
        self.state = self.rng.bit_generator.state
        self._queue: queue.Queue | None = None
        self._stop = threading.Event()
        if prefetch > 0:
            self._queue = queue.Queue(maxsize=prefetch)
            self._thread = threading.Thread(target=self._produce, daemon=True)
            self._thread.start()

    def _produce(self):
        while not self._stop.is_set():
            item = (sample_training_clip(self.rng, self.cfg), self.rng.bit_generator.state)
            while not self._stop.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def next(self):
        if self._queue is None:
            item = sample_training_clip(self.rng, self.cfg)
            self.state = self.rng.bit_generator.state
            return item
        item, self.state = self._queue.get()
        return item

    def close(self):
        self._stop.set()


# -- training ----------------------------------------------------------------------------

@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: list[dict]
    checkpoint: Path | None
    seconds: float


def _set_trainable(module: Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad = flag


def train_step(gen: Generator, disc: Discriminator, opt_g: Adam, opt_d: Adam, frames: np.ndarray,
               masks: np.ndarray, lr: float, weights: LossWeights) -> dict:
    """One discriminator update followed by one generator update."""
    y = Tensor(frames)
    x = Tensor(frames * (1 - masks))
    out = gen(x, masks)
    comp = composite(out, x, masks)

    disc.zero_grad()
    real = disc(to_video(y))
    fake = disc(to_video(comp.detach()))
    loss_d = d_loss(real, fake)
    T.backward(loss_d)
    opt_d.step(lr)

    gen.zero_grad()
    _set_trainable(disc, False)
    try:
        l_adv = g_adv_loss(disc(to_video(comp)))
    finally:
        _set_trainable(disc, True)
    l_hole = l1_hole(y, out, masks)
    l_valid = l1_valid(y, out, masks)
    loss_g = total_loss((l_hole, l_valid, l_adv), weights)
    T.backward(loss_g)
    opt_g.step(lr)
    return {"L_hole": l_hole.item(), "L_valid": l_valid.item(), "L_adv": l_adv.item(),
            "L_D": loss_d.item(), "L_G": loss_g.item()}


def build_models(cfg: Config):
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    gen = Generator(cfg, rng=np.random.default_rng(seeds[0]))
    disc = Discriminator(cfg, rng=np.random.default_rng(seeds[1]))
    return gen, disc, int(seeds[2].generate_state(1)[0])


def checkpoint_blobs(cfg: Config, gen, disc, opt_g, opt_d, step: int, rng_state) -> dict:
    blobs = {}
    blobs.update(module_state(gen, "G"))
    blobs.update(module_state(disc, "D"))
    blobs.update(opt_g.state("optG"))
    blobs.update(opt_d.state("optD"))
    blobs["meta/json"] = json_blob({"step": step, "config": cfg.to_text(), "rng": rng_state})
    return blobs


def load_generator(path: str | Path, cfg: Config | None = None) -> tuple[Generator, Config]:
    """Rebuild the generator stored in a checkpoint; ``cfg`` must match if given."""
    from .config import load_config, parse_pairs

    digest, blobs = load_checkpoint(path, cfg.digest() if cfg is not None else None)
    meta = read_json_blob(blobs["meta/json"])
    stored = load_config(overrides=parse_pairs(meta["config"]))
    if stored.digest() != digest:
        raise ValueError("checkpoint metadata does not match its digest")
    gen = Generator(stored)
    load_module_state(gen, "G", blobs)
    return gen, stored


def train(cfg: Config, out_dir: str | Path | None = None, steps: int | None = None,
          prefetch: int = 0, log_every: int = 100, callback=None, resume: bool = False) -> TrainResult:
    """Train and write ``losses.csv`` and ``checkpoint.bin`` into ``out_dir``.

    With ``resume`` an existing checkpoint there is loaded (models, optimiser
    moments, data generator state) and training continues after its step.
    """
    cfg.validate()
    steps = cfg.steps if steps is None else steps
    weights = LossWeights(cfg.lambda_hole, cfg.lambda_valid, cfg.lambda_adv)
    gen, disc, data_seed = build_models(cfg)
    opt_g = Adam(gen.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_d = Adam(disc.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    out = Path(out_dir) if out_dir is not None else None
    start, rng_state = 1, None
    if resume and out is not None and (out / "checkpoint.bin").exists():
        _, blobs = load_checkpoint(out / "checkpoint.bin", cfg.digest())
        load_module_state(gen, "G", blobs)
        load_module_state(disc, "D", blobs)
        opt_g.load("optG", blobs)
        opt_d.load("optD", blobs)
        meta = read_json_blob(blobs["meta/json"])
        start, rng_state = meta["step"] + 1, meta["rng"]
    stream = ClipStream(cfg, data_seed, prefetch, rng_state)
    csv_log = None
    if out is not None:
        csv_log = LossLog(out / "losses.csv", resume=start > 1)
        if start > 1:
            csv_log.truncate(start - 1)
    history: list[dict] = []
    ckpt = None
    t0 = time.time()
    try:
        for step in range(start, steps + 1):
            frames, masks = stream.next()
            lr = learning_rate(cfg, step)
            rec = train_step(gen, disc, opt_g, opt_d, frames, masks, lr, weights)
            rec["step"] = step
            if not all(np.isfinite(v) for v in rec.values()):
                _dump_divergence(out, cfg, gen, disc, opt_g, opt_d, step, rec)
                raise TrainingDiverged(f"non-finite loss at step {step}: {rec}")
            history.append(rec)
            if csv_log is not None:
                csv_log.append(step, rec["L_hole"], rec["L_valid"], rec["L_adv"], rec["L_D"])
            if log_every and step % log_every == 0:
                log.info("step %d  L_hole %.4f  L_valid %.4f  L_adv %.4f  L_D %.4f  (%.1fs)",
                         step, rec["L_hole"], rec["L_valid"], rec["L_adv"], rec["L_D"], time.time() - t0)
            if callback is not None:
                callback(step, rec)
            if out is not None and (step % cfg.checkpoint_every == 0 or step == steps):
                ckpt = out / "checkpoint.bin"
                save_checkpoint(ckpt, cfg.digest(),
                                checkpoint_blobs(cfg, gen, disc, opt_g, opt_d, step,
                                                 stream.state))
    finally:
        stream.close()
    return TrainResult(gen, disc, history, ckpt, time.time() - t0)


def _dump_divergence(out, cfg, gen, disc, opt_g, opt_d, step, rec):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / "divergence.json").write_text(json.dumps(
        {"step": step, "losses": {k: float(v) for k, v in rec.items()},
         "nonfinite_params": [n for n, p in gen.named_parameters() if not np.all(np.isfinite(p.data))]},
        indent=2))
    save_checkpoint(out / "divergence.bin", cfg.digest(),
                    checkpoint_blobs(cfg, gen, disc, opt_g, opt_d, step, None))


# -- evaluation ------------------------------------------------------------------------

def mean_fill(frames01: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Baseline: every hole pixel takes the mean colour of its frame's visible pixels."""
    out = frames01.copy()
    for t in range(len(frames01)):
        hole = masks[t, 0] > 0.5
        if hole.any() and (~hole).any():
            out[t][hole] = frames01[t][~hole].mean(axis=0)
    return out


def complete(gen: Generator, frames01: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Composited completion of a (T, H, W, 3) clip in [0, 1]; returns the same layout."""
    dtype = gen.encoder[0].weight.dtype
    y = to_model_range(frames01, dtype)
    m = masks.astype(dtype)
    x = y * (1 - m)
    with T.no_grad():
        out = gen(Tensor(x), m)
    comp = out.data * m + x * (1 - m)
    return to_unit_range(comp)


def heldout_clips(cfg: Config, n_clips: int = 20, seed: int = 10_000):
    rng = np.random.default_rng(seed)
    for _ in range(n_clips):
        scene = random_scene(rng, cfg.frame_height, cfg.frame_width, cfg.clip_frames,
                             cfg.max_sprites, cfg.max_velocity)
        clip = generate_clip(scene)
        masks = stationary_video_masks(mask_spec(cfg), cfg.clip_frames, rng)
        yield clip.frames, masks


def evaluate_holdout(gen: Generator, cfg: Config, n_clips: int = 20, seed: int = 10_000) -> dict:
    """Hole-region PSNR of the model and of the mean-colour baseline on fresh clips."""
    model, base = [], []
    for frames, masks in heldout_clips(cfg, n_clips, seed):
        hole = np.transpose(masks, (0, 2, 3, 1)) > 0.5
        model.append(psnr(frames, complete(gen, frames, masks), hole))
        base.append(psnr(frames, mean_fill(frames, masks), hole))
    return {"model_psnr": float(np.mean(model)), "baseline_psnr": float(np.mean(base)),
            "per_clip_model": model, "per_clip_baseline": base}


# -- inference --------------------------------------------------------------------------

def window_centers(n_frames: int, radius: int) -> list[int]:
    """1-based centres of neighbour windows that together cover every frame."""
    if n_frames <= 2 * radius + 1:
        return [(n_frames + 1) // 2]
    centers = list(range(1 + radius, n_frames - radius + 1, radius + 1))
    if centers[-1] + radius < n_frames:
        centers.append(n_frames - radius)
    return centers


def infer_video(gen: Generator, cfg: Config, frames01: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Complete a whole video window by window.

    Each frame keeps the output of the window whose centre is closest to it.
    """
    n = len(frames01)
    if masks.shape[0] != n:
        raise ValueError(f"{masks.shape[0]} masks for {n} frames")
    result = np.empty_like(frames01)
    best = np.full(n, np.inf)
    single = n <= 2 * cfg.temporal_radius + 1
    for c in window_centers(n, cfg.temporal_radius):
        plan = SamplingPlan(c, cfg.temporal_radius, cfg.sample_rate, n, not cfg.no_distant)
        idx = list(range(n)) if single else [i - 1 for i in plan.indices()]
        near = set(plan.neighbors())
        done = complete(gen, frames01[idx], masks[idx])
        for j, i in enumerate(idx):
            if not single and i + 1 not in near:
                continue
            dist = abs(i + 1 - c)
            if dist < best[i]:
                best[i] = dist
                result[i] = done[j]
    return result
