# cython: boundscheck=False, wraparound=False, cdivision=False
"""Compiled kernel backend.

Expression-for-expression mirror of ``_pykernels.py``; outputs are
bit-identical to the fallback (the extension is built with
-ffp-contract=off to keep IEEE double semantics).
"""

from libc.math cimport ceil, floor

import numpy as np

cimport numpy as cnp

cnp.import_array()


def rotate_bilinear(cnp.ndarray[cnp.float64_t, ndim=2] src, double cos_t, double sin_t):
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((h, w), dtype=np.float64)
    cdef double cx = (w - 1) / 2.0
    cdef double cy = (h - 1) / 2.0
    cdef Py_ssize_t x, y
    cdef double dx, dy, sx, sy, fx, fy, v00, v01, v10, v11
    cdef double x0, y0
    cdef Py_ssize_t x0i, y0i
    for y in range(h):
        dy = y - cy
        for x in range(w):
            dx = x - cx
            sx = (cos_t * dx + sin_t * dy) + cx
            sy = (-sin_t * dx + cos_t * dy) + cy
            x0 = floor(sx)
            y0 = floor(sy)
            fx = sx - x0
            fy = sy - y0
            x0i = <Py_ssize_t>x0
            y0i = <Py_ssize_t>y0
            v00 = src[y0i, x0i] if (0 <= x0i < w and 0 <= y0i < h) else 0.0
            v01 = src[y0i, x0i + 1] if (0 <= x0i + 1 < w and 0 <= y0i < h) else 0.0
            v10 = src[y0i + 1, x0i] if (0 <= x0i < w and 0 <= y0i + 1 < h) else 0.0
            v11 = src[y0i + 1, x0i + 1] if (0 <= x0i + 1 < w and 0 <= y0i + 1 < h) else 0.0
            out[y, x] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
    return out


def resize_bilinear(cnp.ndarray[cnp.float64_t, ndim=2] src, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((out_h, out_w), dtype=np.float64)
    cdef double scale_y = h / (<double>out_h)
    cdef double scale_x = w / (<double>out_w)
    cdef Py_ssize_t x, y, x0i, y0i, x1i, y1i
    cdef double sx, sy, fx, fy, y0, x0
    for y in range(out_h):
        sy = (y + 0.5) * scale_y - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > h - 1.0:
            sy = h - 1.0
        y0 = floor(sy)
        fy = sy - y0
        y0i = <Py_ssize_t>y0
        y1i = y0i + 1 if y0i + 1 < h - 1 else h - 1
        for x in range(out_w):
            sx = (x + 0.5) * scale_x - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > w - 1.0:
                sx = w - 1.0
            x0 = floor(sx)
            fx = sx - x0
            x0i = <Py_ssize_t>x0
            x1i = x0i + 1 if x0i + 1 < w - 1 else w - 1
            out[y, x] = (1.0 - fy) * ((1.0 - fx) * src[y0i, x0i] + fx * src[y0i, x1i]) + fy * (
                (1.0 - fx) * src[y1i, x0i] + fx * src[y1i, x1i]
            )
    return out


def rasterize_polygon(
    cnp.ndarray[cnp.float64_t, ndim=1] xs,
    cnp.ndarray[cnp.float64_t, ndim=1] ys,
    Py_ssize_t height,
    Py_ssize_t width,
):
    cdef Py_ssize_t n = xs.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t row, i, j, k, m, start, stop
    cdef double yc, y0, y1, x0, x1, t, xint, key
    for row in range(height):
        yc = row + 0.5
        m = 0
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            y0 = ys[i]
            y1 = ys[j]
            if (y0 <= yc) != (y1 <= yc):
                x0 = xs[i]
                x1 = xs[j]
                t = (yc - y0) / (y1 - y0)
                buf[m] = x0 + t * (x1 - x0)
                m += 1
        if m == 0:
            continue
        # insertion sort; polygons are small
        for i in range(1, m):
            key = buf[i]
            j = i - 1
            while j >= 0 and buf[j] > key:
                buf[j + 1] = buf[j]
                j -= 1
            buf[j + 1] = key
        for k in range(0, m - 1, 2):
            start = <Py_ssize_t>ceil(buf[k] - 0.5)
            stop = <Py_ssize_t>ceil(buf[k + 1] - 0.5)
            if stop > 0 and start < width:
                if start < 0:
                    start = 0
                if stop > width:
                    stop = width
                for i in range(start, stop):
                    out[row, i] = 1
    return out
