"""Central-difference gradient oracle.

Runs independently of the tape: the numeric side only ever calls the
closure forward and perturbs raw arrays in place.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


class GradCheckError(RuntimeError):
    """The analytic gradient is unusable (non-finite or missing)."""


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    wrt: Sequence[Tensor] | None = None,
    floor: float = 1e-8,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn(*inputs)`` must return a single-element tensor. Gradients are checked
    for every tensor in ``wrt`` (default: all ``inputs``); parameters captured
    by the closure can be listed there too. Inputs should be float64.

    Error per scalar is ``|a - n| / max(|a|, |n|, floor)``. Central
    differences carry roughly ``1e-16 * |f| / eps`` of noise, so entries far
    below that need a larger ``floor`` when ``f`` is a deep composite.
    """
    targets = list(inputs if wrt is None else wrt)
    for t in targets:
        if t.dtype != np.float64:
            raise GradCheckError(f"grad_check needs float64 tensors, got {t.dtype}")
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    if out.size != 1:
        raise GradCheckError(f"closure must be scalar-valued, got shape {out.shape}")
    out.backward()

    worst = 0.0
    for t in targets:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError("non-finite analytic gradient")
        numeric = numeric_gradient(fn, inputs, t, eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = np.abs(analytic - numeric) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def numeric_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], target: Tensor, eps: float) -> np.ndarray:
    flat = target.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn(*inputs).data.reshape(-1)[0])
            flat[i] = orig - eps
            down = float(fn(*inputs).data.reshape(-1)[0])
            flat[i] = orig
            grad[i] = (up - down) / (2 * eps)
    return grad.reshape(target.shape)
