"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def col2im(cols, hp, wp, stride):
    n, c, oh, ow, kh, kw = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[..., i, j]
    return out


def max_pool_with_indices(inp, s):
    n, c, h, w = inp.shape
    ph, pw = -(-h // s), -(-w // s)
    padded = np.full((n, c, ph * s, pw * s), -np.inf, dtype=inp.dtype)
    padded[:, :, :h, :w] = inp
    patches = padded.reshape(n, c, ph, s, pw, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ph, pw, s * s)
    local = patches.argmax(axis=-1)
    values = np.take_along_axis(patches, local[..., None], axis=-1)[..., 0]
    ly, lx = np.divmod(local, s)
    gy = np.arange(ph)[:, None] * s + ly
    gx = np.arange(pw)[None, :] * s + lx
    return np.ascontiguousarray(values), (gy * w + gx).astype(np.int64)


def argmax_rows(flat):
    return np.argmax(flat, axis=1).astype(np.int64)
