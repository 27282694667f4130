"""Rank-3 image tensors and the numeric primitives the network is built from.

A tensor is a numpy array of shape ``(height, width, channels)`` stored in
C order, so the flat buffer runs row, then column, then channel. Scalars are
``(1, 1, 1)`` arrays. Every primitive here has a matching vector-Jacobian
product used by :mod:`deblur.autograd`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


def as_tensor(data, dtype=None) -> np.ndarray:
    """Validate ``data`` as a rank-3 tensor and return it as an array."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 3:
        raise ValueError(f"tensor must be rank 3 (h, w, c), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
    return arr


def scalar(value, dtype=np.float64) -> np.ndarray:
    return np.full((1, 1, 1), value, dtype=dtype)


@dataclass(frozen=True)
class ConvKernel:
    """Convolution weights laid out ``[out][in][row][col]`` plus one bias per output."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError(f"kernel weights must be 4-D (out, in, kh, kw), got {self.weights.shape}")
        out_ch, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kh}x{kw}")
        if self.bias.shape != (out_ch,):
            raise ValueError(f"bias must have shape ({out_ch},), got {self.bias.shape}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kh(self) -> int:
        return self.weights.shape[2]

    @property
    def kw(self) -> int:
        return self.weights.shape[3]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size


# --- convolution -----------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    # (h, w, c, kh, kw) -> rows ordered like weights[o].ravel()
    cols = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    h, w = x.shape[:2]
    return cols.reshape(h * w, -1)


def conv2d_raw(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation of ``x`` (h, w, in) with ``weights`` (out, in, kh, kw)."""
    out_ch, in_ch, kh, kw = weights.shape
    if x.shape[2] != in_ch:
        raise ValueError(f"channel mismatch: input has {x.shape[2]}, kernel expects {in_ch}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kh}x{kw}")
    h, w = x.shape[:2]
    if kh == 1 and kw == 1:
        cols = x.reshape(h * w, in_ch)
    else:
        cols = _im2col(x, kh, kw)
    out = cols @ weights.reshape(out_ch, -1).T.astype(x.dtype, copy=False)
    out += bias.astype(x.dtype, copy=False)
    return out.reshape(h, w, out_ch)


def conv2d_vjp(g: np.ndarray, x: np.ndarray, weights: np.ndarray):
    """Gradients of a same-padded conv2d w.r.t. input, weights and bias."""
    out_ch, in_ch, kh, kw = weights.shape
    h, w = x.shape[:2]
    g2 = g.reshape(h * w, out_ch)
    cols = x.reshape(h * w, in_ch) if kh == kw == 1 else _im2col(x, kh, kw)
    gw = (g2.T @ cols).reshape(weights.shape)
    gb = g2.sum(axis=0)
    # transpose of same-padded correlation: correlate with the flipped,
    # in/out-swapped kernel (valid because the padding is symmetric)
    flipped = np.ascontiguousarray(weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = conv2d_raw(g, flipped, np.zeros(in_ch, dtype=g.dtype))
    return gx, gw, gb


def conv2d(input: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Same-padded 2-D cross-correlation plus bias."""
    x = as_tensor(input)
    if x.shape[2] != kernel.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[2]}, kernel expects {kernel.in_channels}"
        )
    return conv2d_raw(x, kernel.weights, kernel.bias)


# --- activations and pooling -----------------------------------------------

def relu(input: np.ndarray) -> np.ndarray:
    return np.maximum(input, 0).astype(np.asarray(input).dtype, copy=False)


def relu_vjp(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0, g, 0).astype(g.dtype, copy=False)


def downsample2(input: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2; a trailing odd row/column is dropped."""
    x = as_tensor(input)
    h, w, c = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"downsample2 needs at least 2x2 input, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    x = x[: 2 * h2, : 2 * w2]
    s = x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]
    return (s * 0.25).astype(x.dtype, copy=False)


def downsample2_vjp(g: np.ndarray, x_shape) -> np.ndarray:
    h, w, c = x_shape
    gx = np.zeros(x_shape, dtype=g.dtype)
    q = g * 0.25
    h2, w2 = g.shape[:2]
    for di in (0, 1):
        for dj in (0, 1):
            gx[di : 2 * h2 : 2, dj : 2 * w2 : 2] = q
    return gx


# --- windowed statistics ---------------------------------------------------

def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def window_mean(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Weighted mean over every valid (unpadded) window, per channel.

    The window is the separable product ``taps[i] * taps[j]``; the output has
    shape ``(h - k + 1, w - k + 1, c)``.
    """
    k = len(taps)
    h, w = x.shape[:2]
    if h < k or w < k:
        raise ValueError(f"input {h}x{w} smaller than window {k}x{k}")
    taps = taps.astype(x.dtype, copy=False)
    ho, wo = h - k + 1, w - k + 1
    rows = taps[0] * x[0:ho]
    for i in range(1, k):
        rows = rows + taps[i] * x[i : i + ho]
    out = taps[0] * rows[:, 0:wo]
    for j in range(1, k):
        out = out + taps[j] * rows[:, j : j + wo]
    return out


def window_mean_vjp(g: np.ndarray, x_shape, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    h, w, c = x_shape
    ho, wo = g.shape[:2]
    taps = taps.astype(g.dtype, copy=False)
    grows = np.zeros((ho, w, c), dtype=g.dtype)
    for j in range(k):
        grows[:, j : j + wo] += taps[j] * g
    gx = np.zeros(x_shape, dtype=g.dtype)
    for i in range(k):
        gx[i : i + ho] += taps[i] * grows
    return gx
