from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(f, inputs, eps=1e-5, max_coords=20, rng=None, floor=1e-6) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` maps the list ``inputs`` (float64 Tensors with ``requires_grad``) to
    a scalar Tensor. Up to ``max_coords`` coordinates per input are probed
    (all of them if the input is smaller). The relative error of one
    coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        t.requires_grad = True
        t.grad = None
    f(inputs).backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f(inputs).item()
            flat[c] = orig - eps
            fm = f(inputs).item()
            flat[c] = orig
            num = (fp - fm) / (2 * eps)
            an = ga.reshape(-1)[c]
            err = abs(an - num) / max(abs(an), abs(num), floor)
            worst = max(worst, err)
    return float(worst)


def random_projection_loss(out: Tensor, rng: np.random.Generator):
    """Fixed random weights ``w`` so that ``sum(out * w)`` exercises every output entry."""
    w = rng.standard_normal(out.shape)
    return (out * w).sum()
