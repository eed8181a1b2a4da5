"""Built-in gradient checks and brute-force oracles, runnable without pytest."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import tensor as T
from .data import SyntheticSceneSpec, generate_clip
from .gradcheck import check_gradients
from .losses import total_loss
from .metrics import psnr, ssim, warping_error
from .patches import extract_patches, reassemble
from .tensor import Tensor
from .transformer import attend, attention_weights, match


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _op_cases(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    m = _leaf(rng, 4, 2)
    x = _leaf(rng, 1, 2, 5, 5)
    k = _leaf(rng, 2, 2, 3, 3)
    v = _leaf(rng, 1, 2, 3, 4, 4)
    k3 = _leaf(rng, 2, 2, 3, 3, 3)
    u = _leaf(rng, 1, 1, 3, 3)
    w = Tensor(rng.standard_normal((3, 4)))
    wu = Tensor(rng.standard_normal((1, 1, 6, 6)))
    keep = np.array([True, False, True, True])
    return {
        "add": (lambda: a + b, [a, b]),
        "mul": (lambda: a * b, [a, b]),
        "div": (lambda: a / (b * b + 1.0), [a, b]),
        "matmul": (lambda: a @ m, [a, m]),
        "softmax": (lambda: T.softmax(a) * w, [a]),
        "masked_softmax": (lambda: T.masked_softmax(a, keep[None, :]) * w, [a]),
        "tanh": (lambda: T.tanh(a) * w, [a]),
        "exp_log": (lambda: T.log(T.exp(a) + 1.0), [a]),
        "conv2d": (lambda: T.conv(x, k, None, stride=2, padding=1), [x, k]),
        "conv3d": (lambda: T.conv(v, k3, None, stride=(1, 2, 2), padding=1), [v, k3]),
        "upsample": (lambda: T.upsample_bilinear(u, 2) * wu, [u]),
    }


def gradient_suite(seeds: int = 3) -> list[tuple[str, bool, str]]:
    results = []
    for name in _op_cases(np.random.default_rng(0)):
        worst = 0.0
        for s in range(seeds):
            fn, inputs = _op_cases(np.random.default_rng(s))[name]
            worst = max(worst, check_gradients(fn, inputs))
        results.append((f"grad {name}", worst < 1e-4, f"rel err {worst:.2e}"))
    return results


def _naive_attention(q, k, v, visible, scale):
    out = np.zeros_like(v)
    for i in range(q.shape[0]):
        sims = {j: float(q[i] @ k[j]) / scale for j in range(q.shape[0]) if visible[j]}
        top = max(sims.values())
        z = sum(math.exp(s - top) for s in sims.values())
        for j, s in sims.items():
            out[i] += math.exp(s - top) / z * v[j]
    return out


def oracle_suite(n: int = 20) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(n):
        grids = [extract_patches(Tensor(rng.standard_normal((2, 2, 4, 6))), (2, 3)) for _ in range(3)]
        vis = rng.random(grids[0].n) < 0.6
        vis[0] = True
        got = attend(attention_weights(match(grids[0], grids[1]), vis), grids[2]).patches.data
        ref = _naive_attention(*(g.patches.data for g in grids), vis, math.sqrt(12))
        worst = max(worst, float(np.max(np.abs(got - ref))))
    f = rng.standard_normal((3, 4, 6, 8))
    roundtrip = all(np.array_equal(reassemble(extract_patches(Tensor(f), s)).data, f)
                    for s in [(1, 1), (2, 4), (3, 2), (6, 8)])
    y = rng.random((2, 16, 16, 3))
    clip = generate_clip(SyntheticSceneSpec(seed=1))
    e_warp = warping_error(clip.frames, clip.flows)
    return [
        ("attention vs loop", worst < 1e-6, f"max diff {worst:.1e}"),
        ("patch roundtrip", roundtrip, "bit exact" if roundtrip else "mismatch"),
        ("loss weights", total_loss((1.0, 1.0, 1.0)) == 2.01, "defaults on (1, 1, 1)"),
        ("psnr cap", psnr(y, y) == 100.0, "identical inputs"),
        ("psnr 0.1 error", psnr(np.zeros(8), np.full(8, 0.1)) == 20.0, "uniform error"),
        ("ssim identity", abs(ssim(y, y) - 1.0) < 1e-9, "identical inputs"),
        ("warping error", e_warp < 1e-6, f"{e_warp:.1e} with true flow"),
    ]


def run(report: Callable[[str], None] = print) -> bool:
    ok = True
    for name, passed, detail in gradient_suite() + oracle_suite():
        report(f"{'PASS' if passed else 'FAIL'}  {name:20s} {detail}")
        ok &= passed
    return ok
