"""Parameterised layers: 2D/3D convolution, spectral normalisation, residual block."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LEAKY_SLOPE = 0.2


class Module:
    """Container that discovers parameters and sub-modules through attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    # normal init scaled for leaky ReLU with slope 0.2
    std = np.sqrt(2.0 / (1.0 + 0.2 ** 2) / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


class _ConvNd(Module):
    nd = 0

    def __init__(self, in_ch: int, out_ch: int, kernel, stride=1, padding=None, dilation=1,
                 rng: np.random.Generator | None = None, dtype=np.float32, bias: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        kernel = T._tuple(kernel, self.nd)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel = kernel
        self.stride = T._tuple(stride, self.nd)
        self.dilation = T._tuple(dilation, self.nd)
        if padding is None:
            # "same"-style: exact size at stride 1, exact halving at stride 2 on even input
            padding = tuple(d * (k - 1) // 2 for k, d in zip(kernel, self.dilation))
        self.padding = T._tuple(padding, self.nd)
        fan_in = in_ch * int(np.prod(kernel))
        self.weight = _he_init(rng, (out_ch, in_ch) + kernel, fan_in, dtype)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None

    def output_size(self, spatial) -> tuple[int, ...]:
        return tuple(T.conv_output_size(s, k, st, p, d) for s, k, st, p, d in
                     zip(spatial, self.kernel, self.stride, self.padding, self.dilation))

    def effective_weight(self) -> Tensor:
        return self.weight

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != self.nd + 2:
            raise ShapeError(f"{type(self).__name__} expects a rank-{self.nd + 2} input, got {x.shape}")
        if x.shape[1] != self.in_ch:
            raise ShapeError(f"channel mismatch: got {x.shape[1]}, layer expects {self.in_ch}")
        return T.conv(x, self.effective_weight(), self.bias, self.stride, self.padding, self.dilation)


class Conv2d(_ConvNd):
    nd = 2


class Conv3d(_ConvNd):
    nd = 3


def conv2d(x: Tensor, layer: Conv2d) -> Tensor:
    return layer(x)


def conv3d(x: Tensor, layer: Conv3d) -> Tensor:
    return layer(x)


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear upsampling with align_corners off (sample points at pixel centres)."""
    return T.upsample_bilinear(x, factor)


def avg_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    *lead, h, w = x.shape
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


# -- spectral normalisation ---------------------------------------------------------

SIGMA_EPS = 1e-12


@dataclass
class SpectralNormState:
    u: np.ndarray
    n_power_iterations: int = 1
    steps: int = field(default=0)


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), SIGMA_EPS)


def power_iteration(w_mat: np.ndarray, state: SpectralNormState, update: bool = True):
    """Run the configured number of power-iteration steps; returns (u, v, sigma)."""
    u, v = state.u, None
    for _ in range(state.n_power_iterations):
        v = _l2_normalize(w_mat.T @ u)
        u = _l2_normalize(w_mat @ v)
    if update:
        state.u = u
        state.steps += state.n_power_iterations
    sigma = float(u @ w_mat @ v)
    return u, v, sigma


def spectral_normalize(weight: Tensor, state: SpectralNormState, update: bool = True) -> Tensor:
    """Divide ``weight`` by its largest singular value estimated by power iteration.

    The estimate is differentiable w.r.t. the weight with ``u``/``v`` held
    fixed. Zero (or numerically zero) weights are returned untouched.
    """
    out_ch = weight.shape[0]
    w_mat = weight.data.reshape(out_ch, -1).astype(np.float64)
    u, v, sigma = power_iteration(w_mat, state, update)
    if abs(sigma) < SIGMA_EPS:
        return weight
    w2 = weight.reshape(out_ch, -1)
    uv = Tensor(np.outer(u, v).astype(weight.dtype))
    sigma_t = T.sum_(w2 * uv)
    return weight / sigma_t


class SNConv3d(Conv3d):
    """3D convolution whose weight is spectrally normalised on every forward pass."""

    def __init__(self, *args, rng: np.random.Generator | None = None, **kwargs):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(*args, rng=rng, **kwargs)
        u = _l2_normalize(rng.standard_normal(self.out_ch))
        self.sn_state = SpectralNormState(u=u)
        self.update_u = True

    def effective_weight(self) -> Tensor:
        return spectral_normalize(self.weight, self.sn_state, update=self.update_u)


# -- residual block ----------------------------------------------------------------

class ResidualBlock(Module):
    """x + conv_b(leaky(conv_a(x))), channel preserving."""

    def __init__(self, channels: int, kernel: int = 3, rng=None, dtype=np.float32):
        self.conv_a = Conv2d(channels, channels, kernel, rng=rng, dtype=dtype)
        self.conv_b = Conv2d(channels, channels, kernel, rng=rng, dtype=dtype)

    def residual(self, x: Tensor) -> Tensor:
        return self.conv_b(T.leaky_relu(self.conv_a(x), LEAKY_SLOPE))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.conv_a.in_ch:
            raise ShapeError(f"residual block expects {self.conv_a.in_ch} channels, got {x.shape[1]}")
        return x + self.residual(x)


def residual_block(x: Tensor, block: ResidualBlock) -> Tensor:
    return block(x)
