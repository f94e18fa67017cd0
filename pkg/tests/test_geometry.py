import pytest

from sws import errors
from sws import geometry
from sws.geometry import (
    BBox,
    Centroid,
    DepthMap,
    centroid_2d,
    centroid_3d,
    dequantize,
    make_bin_spec,
    normalize_depth,
    normalize_pixel,
    quantize,
    relative_position,
)


class TestNormalization(object):
    def test_pixel(self):
        assert normalize_pixel((0, 0), 64, 64) == (0.0, 0.0)
        assert normalize_pixel((64, 32), 64, 64) == (1.0, 0.5)

    def test_pixel_errors(self):
        with pytest.raises(errors.InvalidDimensions):
            normalize_pixel((1, 1), 10, -1)
        with pytest.raises(errors.OutOfRange):
            normalize_pixel((11, 1), 10, 10)

    def test_depth(self, np):
        depth = DepthMap(np.array([[1.0, 2.0], [4.0, 8.0]]))
        norm = normalize_depth(depth, 8.0)
        assert norm.normalized
        assert np.allclose(norm.values, [[0.125, 0.25], [0.5, 1.0]])

    def test_depth_errors(self, np):
        depth = DepthMap(np.full((2, 2), 3.0))
        with pytest.raises(errors.InvalidNormalizer):
            normalize_depth(depth, 0.0)
        with pytest.raises(errors.NormalizerTooSmall):
            normalize_depth(depth, 2.0)

    def test_normalized_range(self, np):
        with pytest.raises(errors.OutOfRange):
            DepthMap(np.full((2, 2), 1.5), normalized=True)


class TestCentroids(object):
    def test_box_validation(self):
        with pytest.raises(errors.InvalidBox):
            BBox(0.5, 0.5, 0.5, 0.9)
        with pytest.raises(errors.InvalidBox):
            BBox(0.1, 0.1, 1.2, 0.5)

    def test_centroid_2d(self):
        c = centroid_2d(BBox(0.0, 0.2, 0.4, 1.0))
        assert c.dim == 2
        assert c.coords == pytest.approx((0.2, 0.6))

    def test_centroid_3d_mean_depth(self, np):
        values = np.zeros((4, 4))
        values[:2, :2] = 0.8
        depth = DepthMap(values, normalized=True)
        # Pixels 0..2 on both axes: a 3x3 block with four 0.8 entries.
        c = centroid_3d(BBox(0.0, 0.0, 0.5, 0.5), depth)
        assert c.coords[:2] == pytest.approx((0.25, 0.25))
        assert c.coords[2] == pytest.approx(0.8 * 4 / 9)

    def test_centroid_3d_needs_normalized(self, np):
        depth = DepthMap(np.ones((4, 4)))
        with pytest.raises(errors.ContractError):
            centroid_3d(BBox(0, 0, 1, 1), depth)

    def test_centroid_range(self):
        with pytest.raises(errors.OutOfRange):
            Centroid((0.5, 1.5))
        with pytest.raises(errors.DimensionError):
            Centroid((0.5,))

    def test_relative_position(self):
        a, b = Centroid((0.1, 0.2, 0.3)), Centroid((0.3, 0.2, 0.1))
        ab = relative_position(a, b)
        ba = relative_position(b, a)
        assert ab.delta == pytest.approx((-0.2, 0.0, 0.2))
        assert (-ab).delta == ba.delta
        assert relative_position(a, a).delta == (0.0, 0.0, 0.0)

    def test_relative_position_dims(self):
        with pytest.raises(errors.DimensionError):
            relative_position(Centroid((0.1, 0.2)), Centroid((0.1, 0.2, 0.3)))


class TestBinning(object):
    @pytest.mark.parametrize("C", geometry.SUPPORTED_BINS)
    def test_edges(self, np, C):
        spec = make_bin_spec(1.5, C)
        assert spec.num_classes == C
        assert len(spec.edges) == C + 1
        assert spec.edges[0] == -1.0 and spec.edges[-1] == 1.0
        assert np.all(np.diff(spec.edges) > 0)
        assert sum(spec.widths) == pytest.approx(2.0)

    @pytest.mark.parametrize("C", [7, 15, 30])
    def test_widths_grow_away_from_center(self, np, C):
        spec = make_bin_spec(1.5, C)
        distance = np.abs(np.arange(C) - C / 2.0)
        widths = np.asarray(spec.widths)
        for i in range(C):
            for j in range(C):
                if distance[i] < distance[j]:
                    assert widths[i] <= widths[j] * (1 + 1e-12)

    def test_three_classes(self):
        spec = make_bin_spec(1.5, 3)
        got = [int(quantize(v, spec)) for v in (-1.0, -0.5, 0.0, 0.5, 1.0)]
        assert got == [0, 0, 1, 2, 2]
        assert int(quantize(geometry.CENTER_TAU, spec)) == 1
        assert int(quantize(-geometry.CENTER_TAU, spec)) == 1
        assert int(quantize(2 * geometry.CENTER_TAU, spec)) == 2
        assert spec.center_class == 1

    @pytest.mark.parametrize("C", geometry.SUPPORTED_BINS)
    def test_round_trip(self, np, C):
        spec = make_bin_spec(1.5, C)
        classes = np.arange(C)
        assert np.array_equal(quantize(dequantize(classes, spec), spec), classes)

    @pytest.mark.parametrize("C", geometry.SUPPORTED_BINS)
    def test_sign_fidelity(self, np, C):
        spec = make_bin_spec(1.5, C)
        v = np.linspace(-1, 1, 2001)
        c = quantize(v, spec)
        outside = c != spec.center_class
        assert np.all(np.sign(dequantize(c[outside], spec)) == np.sign(v[outside]))

    def test_array_shapes(self, np):
        spec = make_bin_spec(1.5, 15)
        v = np.random.uniform(-1, 1, size=(4, 4, 3))
        c = quantize(v, spec)
        assert c.shape == v.shape and c.dtype == np.int64
        assert dequantize(c, spec).shape == v.shape

    def test_invalid(self):
        with pytest.raises(errors.InvalidSpec):
            make_bin_spec(1.5, 1)
        with pytest.raises(errors.InvalidSpec):
            make_bin_spec(1.0, 7)
        spec = make_bin_spec(1.5, 7)
        with pytest.raises(errors.OutOfRange):
            quantize([0.0, -1.01], spec)
        with pytest.raises(errors.InvalidClass):
            dequantize(-1, spec)

    def test_serialization(self):
        spec = make_bin_spec(1.5, 7)
        d = spec.to_dict()
        assert sorted(d) == ["C", "edges", "lambda", "widths"]
        assert geometry.BinSpec.from_dict(d) == spec
        with pytest.raises(errors.ConfigError):
            geometry.BinSpec.from_dict({"C": 7})
