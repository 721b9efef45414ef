# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Levenshtein DP and bilinear image resize.

Both must stay bit-identical to the fallback in `_fallback.py`; the resize
uses the exact same factored expression (scale precomputed, horizontal lerp
before vertical) so f64 rounding matches.
"""

import numpy as np


def levenshtein_codes(int[::1] a, int[::1] b):
    """Edit distance (insert/delete/substitute cost 1) over code arrays."""
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0:
        return lb
    if lb == 0:
        return la
    cdef long[::1] prev = np.arange(lb + 1, dtype=np.int64)
    cdef long[::1] cur = np.empty(lb + 1, dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef long sub, best
    for i in range(la):
        cur[0] = i + 1
        for j in range(lb):
            sub = prev[j] + (0 if a[i] == b[j] else 1)
            best = cur[j] + 1
            if prev[j + 1] + 1 < best:
                best = prev[j + 1] + 1
            if sub < best:
                best = sub
            cur[j + 1] = best
        prev, cur = cur, prev
    return prev[lb]


def bilinear_resize(double[:, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    """Resize with half-pixel sample centers, edge clamp."""
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    out_arr = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double sy_scale = h / <double> out_h
    cdef double sx_scale = w / <double> out_w
    cdef Py_ssize_t dy, dx, y0, y1, x0, x1
    cdef double sy, sx, fy, fx, top, bot
    for dy in range(out_h):
        sy = (dy + 0.5) * sy_scale - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > h - 1:
            sy = h - 1
        y0 = <Py_ssize_t> sy
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fy = sy - y0
        for dx in range(out_w):
            sx = (dx + 0.5) * sx_scale - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > w - 1:
                sx = w - 1
            x0 = <Py_ssize_t> sx
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            fx = sx - x0
            top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
            bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
            out[dy, dx] = (1.0 - fy) * top + fy * bot
    return out_arr
