"""Dense NCHW ops with hand-written backward passes.

Tensors are plain 4-D numpy arrays laid out (batch, channel, row, column).
float32 is the working precision; every op is dtype-generic so float64 can
be used for gradient checks.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import backend


class ShapeError(ValueError):
    """Raised when tensor shapes do not fit an op's contract."""


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def check4(x, name="input"):
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a 4-D (n, c, h, w) array, got shape {np.shape(x)}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (1, 1)
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        for name in ("in_channels", "out_channels", "stride", "groups"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvSpec.{name} must be positive")
        if min(self.kernel) < 1 or self.padding < 0:
            raise ShapeError(f"bad kernel/padding {self.kernel}/{self.padding}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
            )

    @classmethod
    def same(cls, in_channels, out_channels, kernel, groups=1, has_bias=True, stride=1):
        """Spec with ``(k - 1) // 2`` padding; keeps size for odd k at stride 1."""
        return cls(in_channels, out_channels, kernel, stride, (kernel - 1) // 2, groups, has_bias)

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups) + self.kernel

    def output_size(self, h, w):
        kh, kw = self.kernel
        p, s = self.padding, self.stride
        return (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1


# -- convolution -----------------------------------------------------------

def conv2d_forward(x, weights, bias, spec):
    """Grouped 2-D cross-correlation. Returns ``(y, cache)`` for the backward pass."""
    check4(x)
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"input has {c} channels, spec expects {spec.in_channels}")
    if tuple(weights.shape) != spec.weight_shape:
        raise ShapeError(f"weights shape {weights.shape} != expected {spec.weight_shape}")
    if spec.has_bias:
        if bias is None or np.shape(bias) != (spec.out_channels,):
            raise ShapeError(f"bias must have shape ({spec.out_channels},), got {np.shape(bias)}")
    elif bias is not None:
        raise ShapeError("bias given but spec.has_bias is False")
    oh, ow = spec.output_size(h, w)
    if oh < 1 or ow < 1:
        raise ShapeError(f"input {h}x{w} too small for kernel {spec.kernel} / padding {spec.padding}")

    g = spec.groups
    cg, og = c // g, spec.out_channels // g
    kh, kw = spec.kernel
    s, p = spec.stride, spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :oh, :ow]
    cols = win.reshape(n, g, cg, oh, ow, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6).reshape(g, n * oh * ow, cg * kh * kw)
    wg = weights.reshape(g, og, cg * kh * kw)
    out = np.matmul(cols, wg.transpose(0, 2, 1))
    y = out.reshape(g, n, oh, ow, og).transpose(1, 0, 4, 2, 3).reshape(n, g * og, oh, ow)
    if spec.has_bias:
        y = y + bias.reshape(1, -1, 1, 1)
    else:
        y = np.ascontiguousarray(y)
    return y, (cols, weights, spec, x.shape, xp.shape)


def conv2d(x, weights, bias=None, spec=None):
    if spec is None:
        o, ci, kh, kw = weights.shape
        spec = ConvSpec(ci, o, (kh, kw), has_bias=bias is not None)
    return conv2d_forward(x, weights, bias, spec)[0]


def conv2d_backward(dy, cache):
    """Gradients ``(dx, dw, db)``; ``db`` is None for bias-free specs."""
    cols, weights, spec, xshape, xpshape = cache
    n, c, h, w = xshape
    g = spec.groups
    cg, og = c // g, spec.out_channels // g
    kh, kw = spec.kernel
    oh, ow = dy.shape[2:]
    p = spec.padding

    dyg = dy.reshape(n, g, og, oh, ow).transpose(1, 0, 3, 4, 2).reshape(g, n * oh * ow, og)
    dw = np.matmul(dyg.transpose(0, 2, 1), cols).reshape(weights.shape)
    dcols = np.matmul(dyg, weights.reshape(g, og, cg * kh * kw))
    d6 = np.ascontiguousarray(
        dcols.reshape(g, n, oh, ow, cg, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6).reshape(n, c, oh, ow, kh, kw)
    )
    dxp = backend.kernels.col2im(d6, xpshape[2], xpshape[3], spec.stride)
    dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
    db = dy.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return np.ascontiguousarray(dx), dw, db


# -- pixel shuffle ---------------------------------------------------------

def pixel_shuffle(x, l):
    """Channel-to-space: ``out[n, c, y, x] = in[n, c*l*l + l*(y % l) + x % l, y // l, x // l]``."""
    check4(x)
    n, c, h, w = x.shape
    if l < 1 or c % (l * l):
        raise ShapeError(f"channel count {c} not divisible by l^2 = {l * l}")
    co = c // (l * l)
    return x.reshape(n, co, l, l, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * l, w * l)


def pixel_unshuffle(x, l):
    check4(x)
    n, c, H, W = x.shape
    if l < 1 or H % l or W % l:
        raise ShapeError(f"spatial size {H}x{W} not divisible by l = {l}")
    h, w = H // l, W // l
    return x.reshape(n, c, h, l, w, l).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * l * l, h, w)


pixel_shuffle_backward = pixel_unshuffle


# -- pooling ---------------------------------------------------------------

def max_pool_with_indices(x, s):
    """Ceil-mode ``s x s`` max pooling with stride ``s``.

    Indices are row-major flat positions ``y * w + x`` in the original map.
    Ties go to the smallest flat index inside the patch.
    """
    check4(x)
    if s < 1:
        raise ShapeError("pool size must be >= 1")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return backend.kernels.max_pool_with_indices(np.ascontiguousarray(x), int(s))


# -- bilinear resampling ---------------------------------------------------

def interp_matrix(n_in, n_out, align_corners, dtype=np.float64):
    """(n_out, n_in) matrix applying 1-D linear interpolation."""
    if n_out < 1 or n_in < 1:
        raise ShapeError(f"interpolation sizes must be >= 1, got {n_in}->{n_out}")
    dst = np.arange(n_out, dtype=np.float64)
    if align_corners:
        src = dst * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    else:
        src = np.maximum((dst + 0.5) * (n_in / n_out) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m.astype(dtype)


def bilinear_interpolate(x, out_h, out_w, align_corners=False):
    check4(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (out_h, out_w) == (h, w):
        return x.copy()
    ay = interp_matrix(h, out_h, align_corners, x.dtype)
    ax = interp_matrix(w, out_w, align_corners, x.dtype)
    return np.matmul(np.matmul(ay, x), ax.T)


def bilinear_backward(dy, in_h, in_w, align_corners=False):
    out_h, out_w = dy.shape[2:]
    if (out_h, out_w) == (in_h, in_w):
        return dy.copy()
    ay = interp_matrix(in_h, out_h, align_corners, dy.dtype)
    ax = interp_matrix(in_w, out_w, align_corners, dy.dtype)
    return np.matmul(np.matmul(ay.T, dy), ax)


# -- loss ------------------------------------------------------------------

def _mask_weights(mask, shape):
    n, c = shape[:2]
    m = np.asarray(mask, dtype=np.float64)
    if m.shape == (c,):
        m = np.broadcast_to(m, (n, c))
    elif m.shape != (n, c):
        raise ShapeError(f"mask must have shape ({c},) or ({n}, {c}), got {m.shape}")
    return m.reshape(n, c, 1, 1)


def mse_loss(pred, target, mask=None):
    """Mean over every element of the (optionally channel-weighted) squared error."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    d2 = np.square(pred.astype(np.float64) - target)
    if mask is not None:
        d2 = d2 * _mask_weights(mask, pred.shape)
    return float(d2.mean())


def mse_loss_grad(pred, target, mask=None):
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    g = (2.0 / pred.size) * (pred - target)
    if mask is not None:
        g = g * _mask_weights(mask, pred.shape).astype(pred.dtype)
    return g.astype(pred.dtype, copy=False)


# -- small helpers used by the network ------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, y):
    return dy * (y > 0)


def crop(x, h, w):
    """Top-left crop to ``h x w``; keeps the map origin aligned."""
    if h > x.shape[2] or w > x.shape[3]:
        raise ShapeError(f"cannot crop {x.shape[2:]} to {(h, w)}")
    return x[:, :, :h, :w]


def crop_backward(dy, full_h, full_w):
    n, c, h, w = dy.shape
    if (h, w) == (full_h, full_w):
        return dy
    out = np.zeros((n, c, full_h, full_w), dtype=dy.dtype)
    out[:, :, :h, :w] = dy
    return out
