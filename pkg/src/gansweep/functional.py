"""Differentiable layer primitives used by the GAN and the classifier.

All image tensors are laid out ``(batch, channels, height, width)``.
Convolutions go through an im2col/col2im pair so the heavy lifting is a
single BLAS matrix product per call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ShapeError
from .tensor import Tensor

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "tanh")


# -- activations --------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation(t: Tensor, kind: str, slope: float = 0.01) -> Tensor:
    """Apply an elementwise nonlinearity by name.

    ``slope`` is only consulted for ``leaky_relu``.
    """
    x = t.data
    if kind == "relu":
        return Tensor._make(np.maximum(x, 0), (t,), lambda g: (g * (x > 0),), "relu")
    if kind == "leaky_relu":
        lo = np.asarray(slope, dtype=x.dtype)

        def backward(g):
            mask = x > 0
            return (g * (mask * (1 - lo) + lo),)

        out = np.maximum(x, x * lo) if 0 <= slope <= 1 else x * (np.where(x > 0, 1, lo))
        return Tensor._make(out, (t,), backward, "leaky_relu")
    if kind == "sigmoid":
        out = _sigmoid(x)
        return Tensor._make(out, (t,), lambda g: (g * out * (1.0 - out),), "sigmoid")
    if kind == "tanh":
        out = np.tanh(x)
        return Tensor._make(out, (t,), lambda g: (g * (1.0 - out * out),), "tanh")
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def relu(t: Tensor) -> Tensor:
    return activation(t, "relu")


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    return activation(t, "leaky_relu", slope=slope)


def sigmoid(t: Tensor) -> Tensor:
    return activation(t, "sigmoid")


def tanh(t: Tensor) -> Tensor:
    return activation(t, "tanh")


# -- im2col helpers -----------------------------------------------------------
#
# Columns are kept channel-major, shape (k*k*C, N*Ho*Wo) with row order
# (kernel_row, kernel_col, channel). Filling and scattering them is then a
# loop over the k*k kernel offsets with contiguous inner runs.


def _im2col(xp: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Patches of a padded (N,C,H,W) array as a (k*k*C, N*Ho*Wo) matrix."""
    n, c, h, w = xp.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((k, k, c, n, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[i, j] = xt[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(k * k * c, n * ho * wo), ho, wo


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add a column matrix back into a padded (N,C,H,W) array (returned as a view)."""
    n, c, h, w = shape
    patches = cols.reshape(k, k, c, n, ho, wo)
    out = np.zeros((c, n, h, w), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patches[i, j]
    return out.transpose(1, 0, 2, 3)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _unpad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def _rows(x: np.ndarray) -> np.ndarray:
    """(N,C,H,W) -> (C, N*H*W)."""
    return x.transpose(1, 0, 2, 3).reshape(x.shape[1], -1)


# -- convolutions -------------------------------------------------------------


def conv2d(
    input: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlate ``input`` (N,C,H,W) with ``weight`` (O,C,k,k)."""
    x, w = input.data, weight.data
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, wc, k, k2 = w.shape
    if wc != c or k != k2:
        raise ShapeError(f"conv2d weight {w.shape} incompatible with input channels {c}")
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise ShapeError(f"kernel {k} larger than padded input {(h, wd)}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d bias must have shape ({o},), got {bias.shape}")

    xp = _pad(x, padding)
    cols, ho, wo = _im2col(xp, k, stride)
    wmat = w.transpose(0, 2, 3, 1).reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = _rows(g)
        gw = None
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(o, k, k, c).transpose(0, 3, 1, 2)
        gx = None
        if input.requires_grad:
            gx = _unpad(_col2im(wmat.T @ g2, xp.shape, k, stride, ho, wo), padding)
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (input, weight) if bias is None else (input, weight, bias)
    return Tensor._make(out, parents, backward, "conv2d")


def conv_transpose2d(
    input: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Transposed convolution with ``weight`` laid out (C_in, C_out, k, k).

    This is the exact adjoint of :func:`conv2d` with the same weight, stride
    and padding, so the output spatial size is ``(h-1)*stride - 2*padding + k``.
    """
    x, w = input.data, weight.data
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    wc, o, k, k2 = w.shape
    if wc != c or k != k2:
        raise ShapeError(f"conv_transpose2d weight {w.shape} incompatible with input channels {c}")
    hf, wf = (h - 1) * stride + k, (wd - 1) * stride + k
    if hf - 2 * padding < 1 or wf - 2 * padding < 1:
        raise ShapeError("padding leaves an empty output")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv_transpose2d bias must have shape ({o},), got {bias.shape}")

    wmat = w.transpose(0, 2, 3, 1).reshape(c, -1)
    xrows = _rows(x)
    out = _unpad(_col2im(wmat.T @ xrows, (n, o, hf, wf), k, stride, h, wd), padding)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gcols, _, _ = _im2col(_pad(g, padding), k, stride)
        gx = None
        if input.requires_grad:
            gx = (wmat @ gcols).reshape(c, n, h, wd).transpose(1, 0, 2, 3)
        gw = None
        if weight.requires_grad:
            gw = (xrows @ gcols.T).reshape(c, k, k, o).transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (input, weight) if bias is None else (input, weight, bias)
    return Tensor._make(out, parents, backward, "conv_transpose2d")


# -- pooling, dense, normalisation -------------------------------------------


def maxpool2d(input: Tensor, window: int = 2, stride: Optional[int] = None) -> Tensor:
    """Windowed maximum; the gradient goes to the first maximal element in scan order."""
    stride = window if stride is None else stride
    x = input.data
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} exceeds spatial size {(h, w)}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if stride == window:
        return _maxpool_tiled(input, window, ho, wo)

    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x)
        rows = np.arange(ho)[:, None] * stride + idx // window
        cols = np.arange(wo)[None, :] * stride + idx % window
        nn_, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        nn_ = np.broadcast_to(nn_[:, :, None, None], idx.shape)
        cc = np.broadcast_to(cc[:, :, None, None], idx.shape)
        np.add.at(gx, (nn_, cc, rows, cols), g)
        return (gx,)

    return Tensor._make(out, (input,), backward, "maxpool2d")


def _maxpool_tiled(input: Tensor, k: int, ho: int, wo: int) -> Tensor:
    x = input.data
    offsets = [(i, j) for i in range(k) for j in range(k)]
    views = [x[:, :, i : i + k * ho : k, j : j + k * wo : k] for i, j in offsets]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def backward(g):
        gx = np.zeros_like(x)
        # scan order; once a window's gradient is handed out the remainder is zero,
        # so later ties receive nothing
        remaining = np.array(g, dtype=x.dtype)
        for (i, j), v in zip(offsets, views):
            dest = gx[:, :, i : i + k * ho : k, j : j + k * wo : k]
            np.multiply(remaining, v == out, out=dest)
            remaining -= dest
        return (gx,)

    return Tensor._make(out, (input,), backward, "maxpool2d")


def dense(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``input @ weight + bias`` with weight laid out (n_in, n_out)."""
    if input.ndim != 2 or weight.ndim != 2 or input.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot multiply {input.shape} by {weight.shape}")
    out = input @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense bias must have shape ({weight.shape[1]},), got {bias.shape}")
        out = out + bias
    return out


@dataclass
class RunningStats:
    """Per-channel running mean/variance for batch normalisation."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batchnorm2d(
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    running_stats: Optional[RunningStats] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalise each channel, then scale by ``gamma`` and shift by ``beta``.

    Train mode uses batch statistics (biased variance) and, when given,
    updates ``running_stats`` in place with the unbiased variance. Eval mode
    reads the running statistics instead.
    """
    x = input.data
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    g_ = gamma.data.reshape(1, c, 1, 1)
    b_ = beta.data.reshape(1, c, 1, 1)

    if mode == "eval":
        if running_stats is None:
            raise ConfigurationError("eval-mode batchnorm needs running statistics")
        inv_std = 1.0 / np.sqrt(running_stats.var.reshape(1, c, 1, 1) + eps)
        xhat = (x - running_stats.mean.reshape(1, c, 1, 1)) * inv_std

        def backward_eval(g):
            gx = g * g_ * inv_std if input.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        out = (xhat * g_ + b_).astype(x.dtype, copy=False)
        return Tensor._make(out, (input, gamma, beta), backward_eval, "batchnorm2d")
    if mode != "train":
        raise ConfigurationError(f"unknown batchnorm mode {mode!r}")

    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    if running_stats is not None:
        mom = running_stats.momentum
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        running_stats.mean[:] = (1 - mom) * running_stats.mean + mom * mean.reshape(c)
        running_stats.var[:] = (1 - mom) * running_stats.var + mom * unbiased

    def backward(g):
        gxhat = g * g_
        gx = None
        if input.requires_grad:
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = (xhat * g_ + b_).astype(x.dtype, copy=False)
    return Tensor._make(out, (input, gamma, beta), backward, "batchnorm2d")


def dropout(
    input: Tensor,
    rate: float,
    mode: str = "train",
    seed: Union[int, np.random.Generator, None] = None,
) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return input
    if mode != "train":
        raise ConfigurationError(f"unknown dropout mode {mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(input.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(input.dtype)
    return Tensor._make(input.data * scale, (input,), lambda g: (g * scale,), "dropout")


# -- probability losses -------------------------------------------------------

PROB_CLAMP = 1e-7


def binary_cross_entropy(probs: Tensor, targets, clamp: float = PROB_CLAMP) -> Tensor:
    """Mean of ``-(t log p + (1-t) log(1-p))`` with ``p`` clamped away from 0 and 1."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=probs.dtype)
    if t.size != probs.size:
        raise ShapeError(f"prediction/target length mismatch: {probs.size} vs {t.size}")
    t = t.reshape(probs.shape)
    p = probs.data
    pc = np.clip(p, clamp, 1.0 - clamp)
    losses = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    scale = 1.0 / p.size

    # evaluated at the clamped point so saturated outputs still receive a push back
    def backward(g):
        return (g * scale * (pc - t) / (pc * (1.0 - pc)),)

    return Tensor._make(np.asarray(losses.mean(), dtype=p.dtype), (probs,), backward, "bce")
