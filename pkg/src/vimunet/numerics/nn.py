"""Differentiable layers built as single tape primitives.

Images are ``[C, H, W]`` or batched ``[N, C, H, W]``; sequences are
``[..., L, C]``.  Convolution uses the cross-correlation convention, and
transposed-convolution weights are laid out ``[C_in, C_out, kh, kw]`` so that
``transposed_conv2d(y, w)`` is exactly the adjoint of ``conv2d(x, w)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigError, ShapeError, Tensor, apply

__all__ = [
    "conv2d",
    "transposed_conv2d",
    "conv_output_size",
    "max_pool2d",
    "layer_norm",
    "depthwise_conv1d",
]


def _batched(x: Tensor, op: str) -> bool:
    if x.ndim == 3:
        return False
    if x.ndim == 4:
        return True
    raise ShapeError(f"{op}: expected [C,H,W] or [N,C,H,W], got {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv: (size {size} + 2*padding {padding} - kernel {kernel}) is not a "
            f"non-negative multiple of stride {stride}"
        )
    return span // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """[N,C,Hp,Wp] -> strided view [N,C,Ho,Wo,kh,kw]."""
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _scatter_windows(cols: np.ndarray, canvas: tuple[int, int], stride: int) -> np.ndarray:
    """Adjoint of `_windows`: cols [N,Ho,Wo,C,kh,kw] summed into [N,C,*canvas]."""
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((n, c) + canvas, dtype=cols.dtype)
    # non-overlapping case: one reshape, no accumulation
    if kh == stride and kw == stride and canvas == (ho * kh, wo * kw):
        blocks = cols.transpose(0, 3, 1, 4, 2, 5)
        return np.ascontiguousarray(blocks).reshape(n, c, ho * kh, wo * kw)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + hs:stride, j:j + ws:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    return out


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns the [N,O,Ho,Wo] output and the im2col matrix [N, C*kh*kw, Ho*Wo]."""
    n, c = xp.shape[:2]
    o, _, kh, kw = w.shape
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2:4]
    # columns ordered (C, kh, kw) x (Ho, Wo): the copy streams along image rows
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(w.reshape(o, c * kh * kw), cols).reshape(n, o, ho, wo)
    return out, cols


def _weight_grad(g: np.ndarray, cols: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum over batch and positions of g [N,O,Ho,Wo] against im2col columns."""
    n, o = g.shape[:2]
    return np.tensordot(g.reshape(n, o, -1), cols, axes=([0, 2], [0, 2])).reshape(shape)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    batched = _batched(x, "conv2d")
    xd = x.data if batched else x.data[None]
    if w.ndim != 4 or w.shape[1] != xd.shape[1]:
        raise ShapeError(f"conv2d: weight {w.shape} does not match input channels of {x.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {w.shape[0]} output channels")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    kh, kw = w.shape[2:]
    if stride == 1 and (kh % 2 == 0 or kw % 2 == 0):
        raise ConfigError(f"conv2d: even kernel {(kh, kw)} needs stride > 1")
    h, wd = xd.shape[2:]
    conv_output_size(h, kh, stride, padding)
    conv_output_size(wd, kw, stride, padding)

    p = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    out, cols_x = _correlate(xp, w.data, stride)
    if bias is not None:
        out += bias.data[:, None, None]

    def vjp(g):
        g = g if batched else g[None]
        gw = _weight_grad(g, cols_x, w.shape)
        cols = np.tensordot(g, w.data, axes=([1], [0]))  # [N,Ho,Wo,C,kh,kw]
        gxp = _scatter_windows(cols, xp.shape[2:], stride)
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx if batched else gx[0]), gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return apply(out if batched else out[0], parents, vjp)


def transposed_conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 2,
                      padding: int = 0) -> Tensor:
    """Fractionally strided convolution; weight layout [C_in, C_out, kh, kw]."""
    batched = _batched(x, "transposed_conv2d")
    xd = x.data if batched else x.data[None]
    if w.ndim != 4 or w.shape[0] != xd.shape[1]:
        raise ShapeError(
            f"transposed_conv2d: weight {w.shape} does not match input channels of {x.shape}")
    if bias is not None and bias.shape != (w.shape[1],):
        raise ShapeError(
            f"transposed_conv2d: bias {bias.shape} does not match {w.shape[1]} output channels")
    if stride < 1:
        raise ConfigError(f"transposed_conv2d: stride must be >= 1, got {stride}")
    kh, kw = w.shape[2:]
    h, wd = xd.shape[2:]
    canvas = ((h - 1) * stride + kh, (wd - 1) * stride + kw)
    p = padding
    if canvas[0] - 2 * p < 1 or canvas[1] - 2 * p < 1:
        raise ConfigError(f"transposed_conv2d: padding {p} leaves an empty output")

    cols = np.tensordot(xd, w.data, axes=([1], [0]))  # [N,H,W,O,kh,kw]
    full = _scatter_windows(cols, canvas, stride)
    out = full[:, :, p:canvas[0] - p, p:canvas[1] - p] if p else full
    if bias is not None:
        out = out + bias.data[:, None, None]

    def vjp(g):
        g = g if batched else g[None]
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        gx, cols_g = _correlate(gp, w.data, stride)
        gw = _weight_grad(xd, cols_g, w.shape)  # [C_in,C_out,kh,kw]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx if batched else gx[0]), gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return apply(np.ascontiguousarray(out if batched else out[0]), parents, vjp)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    batched = _batched(x, "max_pool2d")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if h % size or w % size:
        raise ConfigError(f"max_pool2d: spatial size {(h, w)} not divisible by {size}")
    blocks = xd.reshape(n, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // size, w // size, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        g = g if batched else g[None]
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
        gx = gb.reshape(n, c, h, w)
        return (gx if batched else gx[0],)

    return apply(out if batched else out[0], (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: last dimension {d} does not match gamma {gamma.shape} / beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return apply(out, (x, gamma, beta), vjp)


def depthwise_conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Causal per-channel convolution along the sequence axis.

    ``x`` is [..., L, C] and ``w`` is [C, K]; output position t sees inputs
    t-K+1 .. t, with zeros before the start of the sequence.
    """
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"depthwise_conv1d: weight {w.shape} does not match channels of {x.shape}")
    k = w.shape[1]
    xd = x.data
    length = xd.shape[-2]
    pad = [(0, 0)] * xd.ndim
    pad[-2] = (k - 1, 0)
    xp = np.pad(xd, pad)
    out = np.zeros_like(xd)
    for j in range(k):
        out += xp[..., j:j + length, :] * w.data[:, j]
    if bias is not None:
        out += bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gw[:, j] = (g * xp[..., j:j + length, :]).sum(axis=lead)
            gxp[..., j:j + length, :] += g * w.data[:, j]
        gb = g.sum(axis=lead) if bias is not None else None
        return gxp[..., k - 1:, :], gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return apply(out, parents, vjp)
