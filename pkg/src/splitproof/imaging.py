"""Grayscale raster utilities: PNG I/O, rotation, rasterization, colormap overlay.

Conventions (fixed so independent implementations can agree byte-for-byte):

- intensities are float64 in [0, 1]; 8-bit PNGs scale by 255, 16-bit by 65535
- saving rounds half-up: ``floor(v * 255 + 0.5)``
- rotation: about the image center, bilinear, zero fill outside the source
- resize: align-corners-false (src = (dst + 0.5) * scale - 0.5), edge clamped
- rasterization: even-odd rule at pixel centers (x + 0.5, y + 0.5), boundary
  ties resolved by the half-open crossing rule (top-left fill)
- colormap: piecewise-linear blue->cyan->yellow->red with breakpoints at
  0, 0.375, 0.625, 1.0 (per channel: R = [0,0,1,1], G = [0,1,1,0], B = [1,1,0,0])
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import DimMismatch, SplitproofError, ZeroRange


class UnreadableFile(SplitproofError):
    pass


class UnsupportedFormat(SplitproofError):
    pass


class DegeneratePolygon(SplitproofError):
    pass


@dataclass(frozen=True)
class GrayImage:
    """Immutable grayscale raster; float64 values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Immutable boolean raster."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D mask, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr.astype(bool))
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _open_png(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as e:
        raise UnreadableFile(f"cannot read {path}: {e}") from e
    except UnidentifiedImageError as e:
        raise UnsupportedFormat(f"{path} is not a supported image file") from e
    except OSError as e:
        raise UnreadableFile(f"cannot read {path}: {e}") from e
    if img.format != "PNG":
        raise UnsupportedFormat(f"{path}: expected PNG, got {img.format}")
    return img


def load_image(path) -> GrayImage:
    """Load an 8/16-bit grayscale (or RGB, collapsed by luminance) PNG."""
    img = _open_png(path)
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        if arr.max() > 65535:
            raise UnsupportedFormat(f"{path}: sample depth above 16 bits")
        arr = arr / 65535.0
    elif img.mode == "RGB":
        # ITU-R 601-2 luminance, as applied by Pillow's "L" conversion
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    else:
        raise UnsupportedFormat(f"{path}: unsupported PNG mode {img.mode}")
    return GrayImage(arr)


def save_image(image: GrayImage, path) -> None:
    """Write an 8-bit grayscale PNG, rounding half-up."""
    quantized = np.floor(image.data * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path, format="PNG")


def load_mask(path) -> BinaryMask:
    """Load a {0, 255} grayscale PNG as a boolean mask."""
    img = _open_png(path)
    if img.mode != "L":
        raise UnsupportedFormat(f"{path}: masks must be 8-bit grayscale PNG")
    arr = np.asarray(img)
    if not np.isin(arr, (0, 255)).all():
        raise UnsupportedFormat(f"{path}: mask samples must be exactly 0 or 255")
    return BinaryMask(arr == 255)


def save_mask(mask: BinaryMask, path) -> None:
    arr = np.where(mask.data, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def save_rgb(rgb: np.ndarray, path) -> None:
    """Write an (H, W, 3) float raster in [0, 1] as a 24-bit RGB PNG."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) raster, got shape {rgb.shape}")
    quantized = np.floor(np.asarray(rgb, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def rotate(image: GrayImage, degrees: float) -> GrayImage:
    """Rotate about the center; bilinear, zero fill, dimensions preserved."""
    if not abs(degrees) < 360.0:
        raise ValueError(f"|degrees| must be < 360, got {degrees}")
    theta = math.radians(degrees)
    out = kernels.rotate_bilinear(image.data, math.cos(theta), math.sin(theta))
    # interpolation of in-range values can overshoot [0, 1] by an ulp
    return GrayImage(np.clip(out, 0.0, 1.0))


def resize_bilinear(field: GrayImage, new_width: int, new_height: int) -> GrayImage:
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be >= 1")
    out = kernels.resize_bilinear(field.data, new_height, new_width)
    return GrayImage(np.clip(out, 0.0, 1.0))


def rasterize_mask(polygon, width: int, height: int) -> BinaryMask:
    """Fill a closed polygon (list of (x, y)) on a width x height grid.

    A pixel is set iff its center lies inside under the even-odd rule; see
    the module docstring for the exact tie convention.
    """
    pts = [(float(x), float(y)) for x, y in polygon]
    if len(set(pts)) < 3:
        raise DegeneratePolygon("polygon needs at least 3 distinct points")
    xs = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64)
    if xs.min() < 0 or ys.min() < 0 or xs.max() > width or ys.max() > height:
        raise ValueError("polygon coordinates outside the raster bounds")
    # shoelace; exactly zero for collinear integer-coordinate input
    area2 = float(np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))
    if area2 == 0.0:
        raise DegeneratePolygon("polygon has zero area")
    return BinaryMask(kernels.rasterize_polygon(xs, ys, height, width).astype(bool))


def normalize_unit(field: np.ndarray) -> np.ndarray:
    """Affinely map a finite raster onto [0, 1]: (x - min) / (max - min)."""
    arr = np.asarray(field, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("field contains non-finite values")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        raise ZeroRange("cannot normalize a constant field")
    return (arr - lo) / (hi - lo)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values through the blue->cyan->yellow->red ramp to (..., 3)."""
    t = np.asarray(values, dtype=np.float64)
    knots = np.array([0.0, 0.375, 0.625, 1.0])
    r = np.interp(t, knots, [0.0, 0.0, 1.0, 1.0])
    g = np.interp(t, knots, [0.0, 1.0, 1.0, 0.0])
    b = np.interp(t, knots, [1.0, 1.0, 0.0, 0.0])
    return np.stack([r, g, b], axis=-1)


def overlay_colormap(heatmap: GrayImage, base: GrayImage, alpha: float) -> np.ndarray:
    """Blend the color-mapped heatmap over the base image.

    Returns alpha * colormap(heat) + (1 - alpha) * gray as an (H, W, 3) raster.
    """
    if heatmap.data.shape != base.data.shape:
        raise DimMismatch(
            f"heatmap {heatmap.data.shape} vs base {base.data.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    color = colormap(heatmap.data)
    gray = np.repeat(base.data[:, :, None], 3, axis=2)
    return alpha * color + (1.0 - alpha) * gray
