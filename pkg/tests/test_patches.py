import pytest

from sws import errors
from sws import nnkit
from sws.patches import (
    PyramidConfig,
    embed_patches,
    extract_pyramid,
    flatten_patches,
    grid_spans,
    resample_patch,
)


class TestGrid(object):
    @pytest.mark.parametrize("g", [1, 3, 5, 7])
    def test_cover(self, g):
        spans = grid_spans(64, g, 0.5)
        assert len(spans) == g
        assert spans[0][0] == 0 and spans[-1][1] == 64
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert a0 < b0 < a1 <= b1

    def test_half_overlap(self):
        spans = grid_spans(64, 3, 0.5)
        assert spans == [(0, 32), (16, 48), (32, 64)]

    def test_no_overlap(self):
        assert grid_spans(9, 3, 0.0) == [(0, 3), (3, 6), (6, 9)]

    def test_degenerate(self):
        with pytest.raises(errors.DegenerateGrid):
            grid_spans(0, 3)
        with pytest.raises(errors.DegenerateGrid):
            grid_spans(4, 7, 0.0)
        with pytest.raises(errors.InvalidSpec):
            grid_spans(64, 3, 0.95)


class TestPyramid(object):
    def test_count(self, np):
        image = np.random.uniform(size=(64, 64, 3))
        pyramid = extract_pyramid(image, scales=(3, 5, 7), overlap=0.5)
        assert len(pyramid) == 9 + 25 + 49 + 1
        assert len(pyramid) == PyramidConfig().num_patches
        full = pyramid.patches[-1]
        assert full.scale == 0 and np.array_equal(full.pixels, image)

    def test_order(self, np):
        pyramid = extract_pyramid(np.zeros((30, 30)), scales=(2, 3),
                                  include_full=False)
        keys = [(p.scale, p.row, p.col) for p in pyramid]
        assert keys[:4] == [(2, 0, 0), (2, 0, 1), (2, 1, 0), (2, 1, 1)]
        assert len(keys) == 13

    def test_bad_image(self, np):
        with pytest.raises(errors.ShapeError):
            extract_pyramid(np.zeros((0, 4, 3)))

    def test_resample(self, np):
        pixels = np.random.uniform(size=(21, 11, 3))
        out = resample_patch(pixels, 16)
        assert out.shape == (16, 16, 3)
        assert pixels.min() - 1e-12 <= out.min() and out.max() <= pixels.max() + 1e-12
        assert np.allclose(resample_patch(np.full((5, 7), 0.25), 4), 0.25)

    def test_embed(self, np):
        pyramid = extract_pyramid(np.random.uniform(size=(32, 32, 3)), scales=(2,))
        flat = flatten_patches(pyramid, side=4)
        assert flat.shape == (5, 48)
        embedder = nnkit.Linear(48, 6, np.random.default_rng(0))
        out = embed_patches(pyramid, embedder, side=4)
        assert out.shape == (5, 6)

        # Pre-flattened batches, as stored by an assembled dataset.
        batch = np.stack([flat, flat[::-1]])
        got = embed_patches(batch, embedder, dtype=np.float64)
        assert got.shape == (2, 5, 6) and got.dtype == np.float64
        assert np.allclose(got.data[0], out.data, atol=1e-5)
        assert np.allclose(got.data[1], out.data[::-1], atol=1e-5)

    def test_config(self):
        c = PyramidConfig(scales=[1, 2], include_full=False)
        assert c.scales == (1, 2) and c.num_patches == 5
        assert PyramidConfig.from_dict(c.to_dict()) == c
        with pytest.raises(errors.ConfigError):
            PyramidConfig(overlap=1.0)
        with pytest.raises(errors.ConfigError):
            PyramidConfig(scales=())
