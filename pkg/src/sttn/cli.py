"""Command-line entry point: ``sttn <subcommand> [options]``.

Exit status is 0 on success, 1 when inputs or options are invalid and 2 when
a run fails. Every command prints the digest of the resolved configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .imageio import atomic_write_bytes, list_videos, read_frames, write_frames, write_masks, write_pgm
from .maskgen import MaskSpec, generate_stationary_mask, load_moving_masks, mask_seeds, stationary_video_masks
from .metrics import FlowField, psnr, ssim, warping_error
from .models import CheckpointError
from .tensor import ShapeError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pair(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--set", dest="overrides", type=_pair, action="append", default=[],
                        metavar="KEY=VALUE", help="override one config entry (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")

    parser = _Parser(prog="sttn", description="Patch-attention video inpainting toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train on synthetic sprite videos")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--prefetch", type=int, default=0, help="clips queued by a producer thread")
    p.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")

    p = sub.add_parser("infer", parents=[common], help="complete every video of a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("make-masks", parents=[common], help="write stationary masks as PGM")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", type=Path, default=Path("masks"))
    p.add_argument("--height", type=int, help="defaults to the config frame height")
    p.add_argument("--width", type=int, help="defaults to the config frame width")

    p = sub.add_parser("eval", parents=[common], help="PSNR, SSIM and warping error per video")
    p.add_argument("--truth", type=Path, required=True, help="dataset root with ground truth")
    p.add_argument("--pred", type=Path, required=True, help="root with completed frames")
    p.add_argument("--out", type=Path, default=Path("metrics.csv"))

    p = sub.add_parser("attn-dump", parents=[common], help="attention heatmaps as PGM")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--video", required=True)
    p.add_argument("--frame", type=int, default=1, help="1-based frame index")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write synthetic clips in dataset layout")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--frames", type=int, help="frames per video (default: config video_frames)")
    p.add_argument("--out", type=Path, required=True)

    sub.add_parser("selftest", parents=[common], help="gradient checks and oracles")
    return parser


def resolve_config(args) -> Config:
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _explicit_config(args) -> bool:
    return args.config is not None or bool(args.overrides) or args.seed is not None


# -- commands --------------------------------------------------------------------------

def cmd_train(args, cfg: Config) -> None:
    from .train import train

    result = train(cfg, args.out, steps=args.steps, prefetch=args.prefetch, resume=args.resume)
    atomic_write_bytes(args.out / "config.cfg", cfg.to_text().encode())
    print(f"checkpoint: {result.checkpoint}")
    print(f"losses: {args.out / 'losses.csv'}")


def _load_gen(args, cfg: Config):
    from .train import load_generator

    gen, stored = load_generator(args.checkpoint, cfg if _explicit_config(args) else None)
    if not _explicit_config(args):
        print(f"checkpoint config digest: {stored.digest()}")
    return gen, stored


def _video_masks(video: Path, frames: np.ndarray) -> np.ndarray:
    return load_moving_masks(video / "masks", len(frames), frames.shape[1:3])


def cmd_infer(args, cfg: Config) -> None:
    from .train import infer_video

    gen, cfg = _load_gen(args, cfg)
    videos = list_videos(args.data)
    if not videos:
        raise ValueError(f"no videos under {args.data}")
    for video in videos:
        frames = read_frames(video / "frames")
        result = infer_video(gen, cfg, frames, _video_masks(video, frames))
        write_frames(args.out / video.name / "frames", result)
        print(f"{video.name}: {len(frames)} frames")


def cmd_make_masks(args, cfg: Config) -> None:
    if args.count < 1:
        raise ValueError("--count must be positive")
    h = args.height or cfg.frame_height
    w = args.width or cfg.frame_width
    for i, s in enumerate(mask_seeds(cfg.seed, args.count)):
        spec = MaskSpec(h, w, cfg.mask_max_points, cfg.mask_max_length * min(h, w), seed=s)
        write_pgm(args.out / f"{i:05d}.pgm", generate_stationary_mask(spec) * 255)
    print(f"wrote {args.count} masks to {args.out}")


def _flows(video: Path):
    path = video / "flows.npz"
    if not path.exists():
        return None
    with np.load(path) as z:
        return FlowField(z["flow"], z["valid"])


def cmd_eval(args, cfg: Config) -> None:
    videos = list_videos(args.truth)
    if not videos:
        raise ValueError(f"no videos under {args.truth}")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["video", "psnr", "ssim", "e_warp"])
    for video in videos:
        truth = read_frames(video / "frames")
        pred = read_frames(args.pred / video.name / "frames")
        if pred.shape != truth.shape:
            raise ValueError(f"{video.name}: prediction {pred.shape} vs truth {truth.shape}")
        flows = _flows(video)
        e_warp = warping_error(pred, flows) if flows is not None else float("nan")
        row = [video.name, f"{psnr(truth, pred):.4f}", f"{ssim(truth, pred):.6f}", f"{e_warp:.6g}"]
        writer.writerow(row)
        print(" ".join(row))
    atomic_write_bytes(args.out, buf.getvalue().encode())


def cmd_attn_dump(args, cfg: Config) -> None:
    from . import tensor as T
    from .data import SamplingPlan
    from .tensor import Tensor
    from .train import to_model_range
    from .transformer import AttentionTrace

    gen, cfg = _load_gen(args, cfg)
    video = args.data / args.video
    frames = read_frames(video / "frames")
    masks = _video_masks(video, frames)
    n = len(frames)
    if not 1 <= args.frame <= n:
        raise ValueError(f"--frame must be in 1..{n}")
    plan = SamplingPlan(args.frame, cfg.temporal_radius, cfg.sample_rate, n, not cfg.no_distant)
    idx = [i - 1 for i in plan.indices()]
    pos = idx.index(args.frame - 1)
    dtype = gen.encoder[0].weight.dtype
    m = masks[idx].astype(dtype)
    x = to_model_range(frames[idx], dtype) * (1 - m)
    trace = AttentionTrace()
    with T.no_grad():
        gen(Tensor(x), m, trace)
    count = 0
    for e in trace.entries:
        t, gh, gw = e["frame_grid"]
        weights = e["weights"].reshape(-1, t, gh, gw)
        for q in range(pos * gh * gw, (pos + 1) * gh * gw):
            # key frames side by side, in sampling order
            heat = np.concatenate(list(weights[q]), axis=1)
            peak = heat.max()
            img = heat / peak * 255 if peak > 0 else heat
            qi, qj = divmod(q - pos * gh * gw, gw)
            write_pgm(args.out / f"layer{e['layer']}_head{e['head']}_q{qi:02d}x{qj:02d}.pgm", img)
            count += 1
    print(f"wrote {count} heatmaps to {args.out} (key frames {[i + 1 for i in idx]})")


def cmd_gen_data(args, cfg: Config) -> None:
    from .data import generate_clip, random_scene
    from .train import mask_spec

    if args.count < 1:
        raise ValueError("--count must be positive")
    n_frames = args.frames or cfg.video_frames
    rng = np.random.default_rng(cfg.seed)
    for i in range(args.count):
        scene = random_scene(rng, cfg.frame_height, cfg.frame_width, n_frames,
                             cfg.max_sprites, cfg.max_velocity)
        clip = generate_clip(scene)
        masks = stationary_video_masks(mask_spec(cfg), n_frames, rng)
        root = args.out / f"video{i:04d}"
        write_frames(root / "frames", clip.frames)
        write_masks(root / "masks", masks)
        buf = io.BytesIO()
        np.savez_compressed(buf, flow=clip.flows.flow, valid=clip.flows.valid)
        atomic_write_bytes(root / "flows.npz", buf.getvalue())
    print(f"wrote {args.count} videos to {args.out}")


def cmd_selftest(args, cfg: Config) -> None:
    from .selftest import run

    if not run():
        raise RuntimeError("selftest failed")


COMMANDS = {
    "train": cmd_train, "infer": cmd_infer, "make-masks": cmd_make_masks, "eval": cmd_eval,
    "attn-dump": cmd_attn_dump, "gen-data": cmd_gen_data, "selftest": cmd_selftest,
}

VALIDATION_ERRORS = (UsageError, ConfigError, CheckpointError, ShapeError, ValueError,
                     FileNotFoundError)


def run(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"config digest: {cfg.digest()}")
    try:
        COMMANDS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
