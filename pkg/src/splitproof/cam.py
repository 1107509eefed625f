"""Class-activation heat maps from exported feature/gradient tensors.

The trainer (whatever produced the network) exports the last convolutional
block's activations and the gradients of the class score with respect to
them; this module turns those into a heat map: per-channel weights by
spatial gradient averaging, a weighted per-pixel combine, then min-max
normalization and bilinear resize to the requested output size.

Tensor interchange container (``FTNSR1``): the 7 magic bytes ``FTNSR1\\n``,
one UTF-8 JSON header line ``{"dtype":"f32","shape":[...],"layout":"row-major"}``,
then the raw little-endian float32 payload.
"""

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .errors import SplitproofError, ZeroRange
from .imaging import normalize_unit

MAGIC = b"FTNSR1\n"


class WeightCountMismatch(SplitproofError):
    pass


class BadTensorFile(SplitproofError):
    pass


class CamVariant(str, Enum):
    RELU_SUM = "ReluSum"
    CHANNEL_MEAN = "ChannelMean"
    CHANNEL_MAX = "ChannelMax"


def _as_stack(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) stack, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("stack contains non-finite values")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureStack:
    """Last-conv-block activations, (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_stack(self.data))

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class GradientStack:
    """Gradients of the class score w.r.t. a FeatureStack; same layout."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_stack(self.data))

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class HeatMap:
    """Normalized activation field; float64 values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D heat map, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("heat map contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("heat map values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def channel_weights(grads: GradientStack) -> list:
    """Spatial mean of each gradient channel."""
    return [float(v) for v in grads.data.mean(axis=(1, 2))]


def cam_raw(features: FeatureStack, weights, variant: CamVariant = CamVariant.RELU_SUM) -> np.ndarray:
    """Combine weighted channels into a raw (H, W) activation field.

    ReluSum: max(0, sum_c w_c A_c). ChannelMean: mean_c(w_c A_c).
    ChannelMax: max_c(w_c A_c).
    """
    w = np.asarray(list(weights), dtype=np.float64)
    if w.shape[0] != features.channels:
        raise WeightCountMismatch(
            f"{w.shape[0]} weights for {features.channels} channels"
        )
    weighted = w[:, None, None] * features.data
    variant = CamVariant(variant)
    if variant is CamVariant.RELU_SUM:
        return np.maximum(weighted.sum(axis=0), 0.0)
    if variant is CamVariant.CHANNEL_MEAN:
        return weighted.mean(axis=0)
    return weighted.max(axis=0)


def make_heatmap(raw: np.ndarray, out_width: int, out_height: int) -> HeatMap:
    """Min-max normalize, then bilinear-resize (in that order).

    A constant raw map has no shape to normalize and raises ZeroRange
    rather than silently producing a flat heat map.
    """
    normalized = normalize_unit(raw)  # raises ZeroRange on constant input
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be >= 1")
    resized = kernels.resize_bilinear(np.ascontiguousarray(normalized), out_height, out_width)
    return HeatMap(np.clip(resized, 0.0, 1.0))


def compute_heatmap(
    features: FeatureStack,
    grads: GradientStack,
    variant: CamVariant = CamVariant.RELU_SUM,
    out_width: int = None,
    out_height: int = None,
) -> HeatMap:
    """Full pipeline: weights from gradients, combine, normalize, resize."""
    if grads.data.shape != features.data.shape:
        raise ValueError(
            f"gradient shape {grads.data.shape} != feature shape {features.data.shape}"
        )
    raw = cam_raw(features, channel_weights(grads), variant)
    h, w = raw.shape
    return make_heatmap(raw, out_width or w, out_height or h)


def write_tensor(arr: np.ndarray, path) -> None:
    """Write a float array as an FTNSR1 container (little-endian float32)."""
    arr = np.asarray(arr)
    header = {"dtype": "f32", "shape": list(arr.shape), "layout": "row-major"}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    """Read an FTNSR1 container; returns a float32 array of the header shape."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadTensorFile(f"{path}: bad magic {magic!r}")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise BadTensorFile(f"{path}: unreadable header") from e
        if header.get("dtype") != "f32" or header.get("layout") != "row-major":
            raise BadTensorFile(f"{path}: unsupported header {header}")
        shape = tuple(int(s) for s in header["shape"])
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read()
    if len(payload) != 4 * count:
        raise BadTensorFile(
            f"{path}: payload holds {len(payload)} bytes, expected {4 * count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
