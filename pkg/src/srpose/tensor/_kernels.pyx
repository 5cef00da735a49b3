# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the tensor core.

Every kernel here has a numpy twin in ``_fallback.py`` and must stay
bit-identical to it; accumulation order is chosen to match.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def col2im(real[:, :, :, :, :, ::1] cols, Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t stride):
    """Scatter-add (n, c, oh, ow, kh, kw) patches back into a padded (n, c, hp, wp) map."""
    cdef Py_ssize_t n = cols.shape[0], c = cols.shape[1]
    cdef Py_ssize_t oh = cols.shape[2], ow = cols.shape[3]
    cdef Py_ssize_t kh = cols.shape[4], kw = cols.shape[5]
    cdef Py_ssize_t i, j, b, ch, y, x
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    # (i, j) outermost so each output cell sums its contributions in the
    # same order as the slice-wise numpy fallback
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        for y in range(oh):
                            for x in range(ow):
                                o[b, ch, y * stride + i, x * stride + j] += cols[b, ch, y, x, i, j]
    return out


def max_pool_with_indices(real[:, :, :, ::1] inp, Py_ssize_t s):
    """Ceil-mode s x s pooling returning patch maxima and row-major flat indices."""
    cdef Py_ssize_t n = inp.shape[0], c = inp.shape[1]
    cdef Py_ssize_t h = inp.shape[2], w = inp.shape[3]
    cdef Py_ssize_t ph = (h + s - 1) // s, pw = (w + s - 1) // s
    cdef Py_ssize_t b, ch, py, px, y, x, x1
    cdef real v
    dtype = np.float32 if real is float else np.float64
    values = np.empty((n, c, ph, pw), dtype=dtype)
    indices = np.empty((n, c, ph, pw), dtype=np.int64)
    cdef real[:, :, :, ::1] vo = values
    cdef cnp.int64_t[:, :, :, ::1] io = indices
    # rows are streamed in memory order; visiting each patch top-to-bottom,
    # left-to-right with a strict > keeps the smallest flat index on ties
    with nogil:
        for b in range(n):
            for ch in range(c):
                for py in range(ph):
                    for px in range(pw):
                        vo[b, ch, py, px] = inp[b, ch, py * s, px * s]
                        io[b, ch, py, px] = py * s * w + px * s
                for y in range(h):
                    py = y // s
                    for px in range(pw):
                        x1 = min((px + 1) * s, w)
                        for x in range(px * s, x1):
                            v = inp[b, ch, y, x]
                            if v > vo[b, ch, py, px]:
                                vo[b, ch, py, px] = v
                                io[b, ch, py, px] = y * w + x
    return values, indices


def argmax_rows(real[:, ::1] flat):
    """Serial row-major argmax per row; ties resolve to the first index."""
    cdef Py_ssize_t r = flat.shape[0], m = flat.shape[1]
    cdef Py_ssize_t i, k, best_i
    cdef real best
    out = np.empty(r, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for i in range(r):
            best = flat[i, 0]
            best_i = 0
            for k in range(1, m):
                if flat[i, k] > best:
                    best = flat[i, k]
                    best_i = k
            o[i] = best_i
    return out
