"""Kernel backends: the compiled extension and the Python fallback must agree
bit-for-bit, and the rasterizer must match the per-point even-odd oracle."""

import math

import numpy as np
import pytest

from splitproof.kernels import _pykernels, active_backend
from oracles import rasterize_by_point_test, resize_bilinear_fractions

try:
    from splitproof.kernels import _ckernels
except ImportError:
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")

BACKENDS = [_pykernels] + ([_ckernels] if _ckernels is not None else [])


def test_a_backend_is_active():
    assert active_backend() in ("c", "py")


@needs_ext
def test_rotate_backends_bit_identical(rng):
    for _ in range(25):
        h, w = rng.integers(1, 48, 2)
        src = np.ascontiguousarray(rng.random((h, w)))
        theta = math.radians(rng.uniform(-359, 359))
        a = _ckernels.rotate_bilinear(src, math.cos(theta), math.sin(theta))
        b = _pykernels.rotate_bilinear(src, math.cos(theta), math.sin(theta))
        assert np.array_equal(a, b)


@needs_ext
def test_resize_backends_bit_identical(rng):
    for _ in range(25):
        h, w = (int(v) for v in rng.integers(1, 32, 2))
        oh, ow = (int(v) for v in rng.integers(1, 64, 2))
        src = np.ascontiguousarray(rng.random((h, w)))
        assert np.array_equal(
            _ckernels.resize_bilinear(src, oh, ow), _pykernels.resize_bilinear(src, oh, ow)
        )


@needs_ext
def test_rasterize_backends_bit_identical(rng):
    for _ in range(50):
        n = int(rng.integers(3, 12))
        w, h = (int(v) for v in rng.integers(4, 40, 2))
        xs = rng.uniform(0, w, n)
        ys = rng.uniform(0, h, n)
        assert np.array_equal(
            _ckernels.rasterize_polygon(xs, ys, h, w), _pykernels.rasterize_polygon(xs, ys, h, w)
        )


@pytest.mark.parametrize("kernels", BACKENDS)
def test_rasterize_matches_point_oracle(kernels, rng):
    for _ in range(60):
        n = int(rng.integers(3, 10))
        w, h = (int(v) for v in rng.integers(4, 20, 2))
        xs = rng.uniform(0, w, n)
        ys = rng.uniform(0, h, n)
        got = kernels.rasterize_polygon(xs, ys, h, w)
        expected = rasterize_by_point_test(list(xs), list(ys), h, w)
        assert got.astype(bool).tolist() == expected


@pytest.mark.parametrize("kernels", BACKENDS)
def test_rasterize_square_fixture(kernels):
    xs = np.array([1.0, 4.0, 4.0, 1.0])
    ys = np.array([1.0, 1.0, 4.0, 4.0])
    mask = kernels.rasterize_polygon(xs, ys, 6, 6)
    assert int(mask.sum()) == 9
    assert mask[1:4, 1:4].all()


@pytest.mark.parametrize("kernels", BACKENDS)
def test_resize_matches_fraction_oracle(kernels, rng):
    for _ in range(10):
        h, w = (int(v) for v in rng.integers(1, 6, 2))
        oh, ow = (int(v) for v in rng.integers(1, 9, 2))
        src = rng.integers(0, 256, (h, w)).astype(np.float64) / 255.0
        got = kernels.resize_bilinear(np.ascontiguousarray(src), oh, ow)
        expected = resize_bilinear_fractions(src.tolist(), oh, ow)
        for y in range(oh):
            for x in range(ow):
                assert got[y, x] == pytest.approx(float(expected[y][x]), abs=1e-12)


@pytest.mark.parametrize("kernels", BACKENDS)
def test_resize_2x2_to_4x4_fixture(kernels):
    src = np.array([[0.0, 1.0], [1.0, 0.0]])
    got = kernels.resize_bilinear(src, 4, 4)
    expected = np.array(
        [
            [0.0, 0.25, 0.75, 1.0],
            [0.25, 0.375, 0.625, 0.75],
            [0.75, 0.625, 0.375, 0.25],
            [1.0, 0.75, 0.25, 0.0],
        ]
    )
    assert np.allclose(got, expected, atol=1e-15)


@pytest.mark.parametrize("kernels", BACKENDS)
def test_rotate_zero_degrees_is_identity(kernels, rng):
    src = np.ascontiguousarray(rng.random((9, 13)))
    out = kernels.rotate_bilinear(src, 1.0, 0.0)
    assert np.array_equal(out, src)
