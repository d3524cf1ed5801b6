"""
Differentiable operators.

Feature maps are channels-last: ``(H, W, C)`` or batched ``(B, H, W, C)``.
Convolution kernels are ``(k, k, Cin // groups, Cout)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(a, b):
    a = as_tensor(a)
    b = as_tensor(b) if isinstance(b, Tensor) else Tensor(b, dtype=a.dtype)
    return a, b


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return Tensor._from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return Tensor._from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return Tensor._from_op(
        np.ascontiguousarray(x.data.transpose(axes)), (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor._from_op(
        np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def matmul(a, b, transpose_a=False, transpose_b=False) -> Tensor:
    """``op(a) @ op(b)`` over the last two axes; leading axes are batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    A = np.swapaxes(a.data, -1, -2) if transpose_a else a.data
    B = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if A.shape[-1] != B.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {A.shape} @ {B.shape}")
    out = A @ B

    def backward(g):
        gA = g @ np.swapaxes(B, -1, -2)
        gB = np.swapaxes(A, -1, -2) @ g
        if transpose_a:
            gA = np.swapaxes(gA, -1, -2)
        if transpose_b:
            gB = np.swapaxes(gB, -1, -2)
        return _unbroadcast(gA, a.shape), _unbroadcast(gB, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def gelu(x) -> Tensor:
    """Exact GELU ``x * Phi(x)``."""
    x = as_tensor(x)
    dt = x.data.dtype
    cdf = (0.5 * (1.0 + erf(x.data / _SQRT2))).astype(dt, copy=False)
    out = x.data * cdf

    def backward(g):
        pdf = (_INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)).astype(dt, copy=False)
        return (g * (cdf + x.data * pdf),)

    return Tensor._from_op(out, (x,), backward)


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize over the last (feature) axis at every spatial position, then scale and shift."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return Tensor._from_op(out, (x, gain, bias), backward)


def conv2d(x, kernel, bias=None, stride=1, groups=1) -> Tensor:
    """Zero "same" padding 2-D convolution (cross-correlation), odd square kernels.

    Output spatial extents are ``ceil(H / stride)``, ``ceil(W / stride)``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise ValueError(f"conv2d expects (H,W,C) or (B,H,W,C), got {x.shape}")
        x = reshape(x, (1,) + x.shape)
    out = _conv2d_same(x, kernel, groups)
    if bias is not None:
        out = add(out, as_tensor(bias))
    if stride != 1:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        out = _subsample(out, stride)
    if not batched:
        out = reshape(out, out.shape[1:])
    return out


def _subsample(x: Tensor, s: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[:, ::s, ::s, :] = g
        return (full,)

    return Tensor._from_op(np.ascontiguousarray(x.data[:, ::s, ::s, :]), (x,), backward)


def _conv2d_same(x: Tensor, kernel: Tensor, groups: int) -> Tensor:
    B, H, W, Cin = x.shape
    k, k2, cin_g, Cout = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd extent, got {kernel.shape}")
    if groups < 1 or Cin % groups or Cout % groups:
        raise ValueError(f"channels ({Cin} -> {Cout}) not divisible by groups={groups}")
    if cin_g != Cin // groups:
        raise ValueError(f"kernel expects {cin_g * groups} input features, input has {Cin}")
    p = k // 2
    xd, K = x.data, kernel.data

    if groups == Cin and Cout == Cin:
        return _depthwise(x, kernel)

    if k == 1:
        cols = xd.reshape(B * H * W, 1, Cin)
    else:
        xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.empty((B, H, W, k * k, Cin), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i * k + j, :] = xp[:, i:i + H, j:j + W, :]
        cols = cols.reshape(B * H * W, k * k, Cin)

    cout_g = Cout // groups
    if groups == 1:
        flat = cols.reshape(B * H * W, k * k * Cin)
        Kf = K.reshape(k * k * Cin, Cout)
        out = (flat @ Kf).reshape(B, H, W, Cout)
    else:
        # (groups, N, k*k*cin_g) @ (groups, k*k*cin_g, cout_g)
        cg = np.ascontiguousarray(
            cols.reshape(B * H * W, k * k, groups, cin_g).transpose(2, 0, 1, 3)
        ).reshape(groups, B * H * W, k * k * cin_g)
        Kg = np.ascontiguousarray(
            K.reshape(k * k, cin_g, groups, cout_g).transpose(2, 0, 1, 3)
        ).reshape(groups, k * k * cin_g, cout_g)
        out = (cg @ Kg).transpose(1, 0, 2).reshape(B, H, W, Cout)

    def backward(g):
        g2 = g.reshape(B * H * W, Cout)
        if groups == 1:
            gK = (flat.T @ g2).reshape(K.shape)
            gcols = (g2 @ Kf.T).reshape(B, H, W, k * k, Cin)
        else:
            gg = np.ascontiguousarray(g2.reshape(B * H * W, groups, cout_g).transpose(1, 0, 2))
            gKg = np.swapaxes(cg, 1, 2) @ gg  # (groups, k*k*cin_g, cout_g)
            gK = gKg.reshape(groups, k * k, cin_g, cout_g).transpose(1, 2, 0, 3).reshape(K.shape)
            gcg = gg @ np.swapaxes(Kg, 1, 2)  # (groups, N, k*k*cin_g)
            gcols = gcg.reshape(groups, B * H * W, k * k, cin_g).transpose(1, 2, 0, 3)
            gcols = gcols.reshape(B, H, W, k * k, Cin)
        if k == 1:
            gx = gcols.reshape(B, H, W, Cin)
        else:
            gxp = np.zeros((B, H + 2 * p, W + 2 * p, Cin), dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + H, j:j + W, :] += gcols[:, :, :, i * k + j, :]
            gx = gxp[:, p:p + H, p:p + W, :]
        return np.ascontiguousarray(gx), gK

    return Tensor._from_op(out, (x, kernel), backward)


def _depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    B, H, W, C = x.shape
    k = kernel.shape[0]
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    K = kernel.data[:, :, 0, :]
    out = np.zeros((B, H, W, C), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + H, j:j + W, :] * K[i, j]

    def backward(g):
        gxp = np.zeros_like(xp)
        gK = np.empty_like(kernel.data)
        for i in range(k):
            for j in range(k):
                gK[i, j, 0] = (xp[:, i:i + H, j:j + W, :] * g).sum(axis=(0, 1, 2))
                gxp[:, i:i + H, j:j + W, :] += g * K[i, j]
        return np.ascontiguousarray(gxp[:, p:p + H, p:p + W, :]), gK

    return Tensor._from_op(out, (x, kernel), backward)


def mse_loss(pred, target) -> Tensor:
    """Mean over samples of the squared Frobenius error, divided by the per-sample element count."""
    pred, target = as_tensor(pred), as_tensor(target)
    diff = sub(pred, target)
    return mean(mul(diff, diff))
