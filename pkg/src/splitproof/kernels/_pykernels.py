"""Pure-Python (numpy) kernel backend.

Mirrors ``_ckernels.pyx`` expression for expression. Any change to the
arithmetic here must be made there too, in the same evaluation order, to
keep the two backends bit-identical.
"""

import math

import numpy as np


def rotate_bilinear(src: np.ndarray, cos_t: float, sin_t: float) -> np.ndarray:
    """Rotate about the image center, bilinear sampling, zero fill outside.

    The caller supplies cos/sin of the angle so that both backends consume
    the exact same scalars. Destination pixel (x, y) samples the source at

        sx = (cos_t * (x - cx) + sin_t * (y - cy)) + cx
        sy = (-sin_t * (x - cx) + cos_t * (y - cy)) + cy

    with cx = (w - 1) / 2, cy = (h - 1) / 2.
    """
    h, w = src.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    dx = np.arange(w, dtype=np.float64) - cx
    dy = np.arange(h, dtype=np.float64) - cy
    dxg, dyg = np.meshgrid(dx, dy)
    sx = (cos_t * dxg + sin_t * dyg) + cx
    sy = (-sin_t * dxg + cos_t * dyg) + cy
    return _sample_bilinear_zero(src, sx, sy)


def _sample_bilinear_zero(src, sx, sy):
    h, w = src.shape
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)

    def tap(yi, xi):
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        v = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(ok, v, 0.0)

    v00 = tap(y0i, x0i)
    v01 = tap(y0i, x0i + 1)
    v10 = tap(y0i + 1, x0i)
    v11 = tap(y0i + 1, x0i + 1)
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize, align-corners-false, edge clamped.

    Source coordinate of destination pixel d along an axis of source length
    s and destination length t is (d + 0.5) * (s / t) - 0.5, clamped to
    [0, s - 1].
    """
    h, w = src.shape
    scale_y = h / out_h
    scale_x = w / out_w
    sy = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * scale_y - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * scale_x - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    y0i = y0.astype(np.int64)
    x0i = x0.astype(np.int64)
    y1i = np.minimum(y0i + 1, h - 1)
    x1i = np.minimum(x0i + 1, w - 1)
    v00 = src[np.ix_(y0i, x0i)]
    v01 = src[np.ix_(y0i, x1i)]
    v10 = src[np.ix_(y1i, x0i)]
    v11 = src[np.ix_(y1i, x1i)]
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)


def rasterize_polygon(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon at pixel centers.

    Pixel (x, y) is set iff its center (x + 0.5, y + 0.5) is inside under
    the even-odd rule with the half-open crossing convention
    ``(y0 <= yc) != (y1 <= yc)``; intersections exactly on a center resolve
    to the top-left fill rule. Returns a (height, width) uint8 mask.
    """
    n = xs.shape[0]
    x1 = np.roll(xs, -1)
    y1 = np.roll(ys, -1)
    out = np.zeros((height, width), dtype=np.uint8)
    for row in range(height):
        yc = row + 0.5
        crossing = (ys <= yc) != (y1 <= yc)
        if not crossing.any():
            continue
        ex0 = xs[crossing]
        ey0 = ys[crossing]
        ex1 = x1[crossing]
        ey1 = y1[crossing]
        t = (yc - ey0) / (ey1 - ey0)
        xint = np.sort(ex0 + t * (ex1 - ex0))
        for k in range(0, xint.shape[0] - 1, 2):
            start = math.ceil(xint[k] - 0.5)
            stop = math.ceil(xint[k + 1] - 0.5)
            if stop > 0 and start < width:
                out[row, max(start, 0) : min(stop, width)] = 1
    return out
