import numpy as np
import pytest

from splitproof import cam
from splitproof.cam import (
    BadTensorFile,
    CamVariant,
    FeatureStack,
    GradientStack,
    HeatMap,
    WeightCountMismatch,
)
from splitproof.errors import ZeroRange
from oracles import normalize_fractions, resize_bilinear_fractions


class TestChannelWeights:
    def test_constant_ones(self):
        grads = GradientStack(np.ones((1, 2, 2)))
        assert cam.channel_weights(grads) == [1.0]

    def test_mean(self):
        grads = GradientStack(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert cam.channel_weights(grads) == [2.5]

    def test_sign_preserved(self):
        grads = GradientStack(np.stack([np.ones((2, 2)), -np.ones((2, 2))]))
        assert cam.channel_weights(grads) == [1.0, -1.0]


class TestCamRaw:
    def test_identity(self):
        feats = FeatureStack(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = cam.cam_raw(feats, [1.0], CamVariant.RELU_SUM)
        assert out.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_negative_weight_clamps(self):
        feats = FeatureStack(np.full((1, 3, 3), 2.0))
        out = cam.cam_raw(feats, [-1.0], CamVariant.RELU_SUM)
        assert np.all(out == 0.0)

    def test_two_channel_max_and_mean(self):
        feats = FeatureStack(np.stack([np.full((1, 1), 2.0), np.full((1, 1), 1.0)]))
        w = [1.0, -1.0]
        assert cam.cam_raw(feats, w, CamVariant.CHANNEL_MAX)[0, 0] == 2.0
        assert cam.cam_raw(feats, w, CamVariant.CHANNEL_MEAN)[0, 0] == 0.5

    def test_weight_count_mismatch(self):
        feats = FeatureStack(np.ones((2, 2, 2)))
        with pytest.raises(WeightCountMismatch):
            cam.cam_raw(feats, [1.0])

    def test_relu_sum_nonnegative(self, rng):
        feats = FeatureStack(rng.normal(size=(4, 6, 6)))
        out = cam.cam_raw(feats, rng.normal(size=4), CamVariant.RELU_SUM)
        assert out.min() >= 0.0

    def test_channel_mean_identity_single_channel(self, rng):
        data = rng.random((1, 5, 5))
        out = cam.cam_raw(FeatureStack(data), [1.0], CamVariant.CHANNEL_MEAN)
        assert out == pytest.approx(data[0])


class TestMakeHeatmap:
    def test_normalize_only(self):
        out = cam.make_heatmap(np.array([[0.0, 1.0], [2.0, 3.0]]), 2, 2)
        assert out.data == pytest.approx(np.array([[0.0, 1 / 3], [2 / 3, 1.0]]))

    def test_constant_raises(self):
        with pytest.raises(ZeroRange):
            cam.make_heatmap(np.full((2, 2), 5.0), 2, 2)

    def test_normalize_then_resize_matches_fraction_oracle(self):
        raw = [[0.0, 1.0], [2.0, 3.0]]
        out = cam.make_heatmap(np.array(raw), 4, 4)
        expected = resize_bilinear_fractions(normalize_fractions(raw), 4, 4)
        for y in range(4):
            for x in range(4):
                assert out.data[y, x] == pytest.approx(float(expected[y][x]), abs=1e-12)

    def test_scale_invariance(self, rng):
        feats = rng.random((3, 5, 5))
        grads = rng.normal(size=(3, 5, 5))
        for variant in CamVariant:
            w = cam.channel_weights(GradientStack(grads))
            base = cam.make_heatmap(cam.cam_raw(FeatureStack(feats), w, variant), 10, 10)
            scaled = cam.make_heatmap(
                cam.cam_raw(FeatureStack(7.3 * feats), w, variant), 10, 10
            )
            assert np.abs(base.data - scaled.data).max() < 1e-9


class TestPipeline:
    def test_compute_heatmap_shape_check(self, rng):
        feats = FeatureStack(rng.random((2, 4, 4)))
        grads = GradientStack(rng.random((2, 5, 4)))
        with pytest.raises(ValueError):
            cam.compute_heatmap(feats, grads)

    def test_compute_heatmap_end_to_end(self, rng):
        feats = FeatureStack(rng.random((2, 4, 4)))
        grads = GradientStack(rng.random((2, 4, 4)))
        out = cam.compute_heatmap(feats, grads, CamVariant.RELU_SUM, 8, 8)
        assert isinstance(out, HeatMap)
        assert out.data.shape == (8, 8)


class TestTensorFile:
    def test_roundtrip(self, tmp_path, rng):
        arr = rng.random((3, 4, 5)).astype(np.float32)
        cam.write_tensor(arr, tmp_path / "t.ftnsr")
        again = cam.read_tensor(tmp_path / "t.ftnsr")
        assert again.dtype == np.float32
        assert np.array_equal(again, arr)

    def test_header_bytes_exact(self, tmp_path):
        cam.write_tensor(np.zeros((2, 3, 4), dtype=np.float32), tmp_path / "t.ftnsr")
        raw = (tmp_path / "t.ftnsr").read_bytes()
        assert raw.startswith(b"FTNSR1\n")
        header, _, _ = raw[7:].partition(b"\n")
        assert header == b'{"dtype":"f32","shape":[2,3,4],"layout":"row-major"}'

    def test_bad_magic(self, tmp_path):
        (tmp_path / "t.ftnsr").write_bytes(b"GARBAGE\n{}")
        with pytest.raises(BadTensorFile):
            cam.read_tensor(tmp_path / "t.ftnsr")

    def test_truncated_payload(self, tmp_path):
        cam.write_tensor(np.zeros((2, 2), dtype=np.float32), tmp_path / "t.ftnsr")
        raw = (tmp_path / "t.ftnsr").read_bytes()
        (tmp_path / "t.ftnsr").write_bytes(raw[:-4])
        with pytest.raises(BadTensorFile):
            cam.read_tensor(tmp_path / "t.ftnsr")

    def test_2d_heatmap_shape(self, tmp_path):
        cam.write_tensor(np.zeros((4, 6)), tmp_path / "h.ftnsr")
        assert cam.read_tensor(tmp_path / "h.ftnsr").shape == (4, 6)

    def test_little_endian_payload(self, tmp_path):
        cam.write_tensor(np.array([[1.0]]), tmp_path / "t.ftnsr")
        raw = (tmp_path / "t.ftnsr").read_bytes()
        assert raw[-4:] == np.float32(1.0).tobytes()  # 00 00 80 3f


class TestHeatMapType:
    def test_range_enforced(self):
        with pytest.raises(ValueError):
            HeatMap(np.array([[0.0, 1.2]]))

    def test_immutable(self, rng):
        h = HeatMap(rng.random((2, 2)))
        with pytest.raises(ValueError):
            h.data[0, 0] = 0.5
