"""Central finite-difference checks for the tensor core."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm difference scaled by the larger max-norm of the two."""
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data.sum())
        flat[i] = orig - h
        fm = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.grad = None
    out = fn()
    backward(out.sum() if out.size != 1 else out)
    return [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error over ``inputs`` of backprop vs central differences.

    ``fn`` is re-evaluated per perturbation; a non-scalar output is summed.
    Inputs must be float64 for the 1e-4 bound to be meaningful.
    """
    analytic = analytic_grads(fn, inputs)
    worst = 0.0
    for x, ga in zip(inputs, analytic):
        gn = numerical_grad(fn, x, h)
        worst = max(worst, relative_error(ga, gn))
    return worst


def check_directional(fn: Callable[[], Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
                      n_dirs: int = 3, h: float = 1e-5) -> float:
    """Compare the gradient against finite differences along random directions.

    Used for composed models where per-coordinate differencing is too slow.
    All inputs are perturbed jointly along a unit direction. The error is
    scaled by the gradient norm, which bounds every unit-direction slope, so
    a direction nearly orthogonal to the gradient does not inflate it.
    """
    analytic = analytic_grads(fn, inputs)
    scale = float(np.sqrt(sum(float((g * g).sum()) for g in analytic)))
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(x.shape) for x in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        predicted = sum(float((g * d).sum()) for g, d in zip(analytic, dirs))
        originals = [x.data.copy() for x in inputs]
        for x, d in zip(inputs, dirs):
            x.data[...] = x.data + h * d
        fp = float(fn().data.sum())
        for x, d, o in zip(inputs, dirs, originals):
            x.data[...] = o - h * d
        fm = float(fn().data.sum())
        for x, o in zip(inputs, originals):
            x.data[...] = o
        measured = (fp - fm) / (2 * h)
        err = abs(predicted - measured) / max(scale, abs(measured), 1e-12)
        worst = max(worst, err)
    return worst
