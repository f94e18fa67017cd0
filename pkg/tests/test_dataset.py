import os
import warnings

import pytest

from sws import errors
from sws import dataset
from sws.dataset import (
    QUESTION_VOCAB,
    UNK,
    Dataset,
    assemble,
    generate_dataset,
    iter_batches,
    make_batch,
    object_features,
    relpos_rows,
)
from sws.geometry import make_bin_spec, quantize
from sws.patches import PyramidConfig
from sws.scenegen import SceneSpec

# This is needed until a later release of py.test.  See Issue #2430
# https://github.com/pytest-dev/pytest/issues/2430
warnings.simplefilter("always", UserWarning)


class TestVocabulary(object):
    def test_encode(self, np):
        ids, mask = QUESTION_VOCAB.encode("Is the red cube left of the ferret?", 10)
        assert ids.shape == (10,) and mask.sum() == 8
        assert ids[7] == UNK
        assert QUESTION_VOCAB.words[ids[2]] == "red"

    def test_too_long(self):
        with pytest.raises(errors.ShapeError):
            QUESTION_VOCAB.encode("a b c d", 3)


class TestDirectory(object):
    def test_layout(self, tiny_dataset):
        names = sorted(os.listdir(tiny_dataset))
        assert names == ["dataset.json", "depth", "labels", "questions.jsonl",
                         "scenes", "splits.json"]
        assert len(os.listdir(os.path.join(tiny_dataset, "scenes"))) == 12
        assert len(os.listdir(os.path.join(tiny_dataset, "depth"))) == 12
        assert len(os.listdir(os.path.join(tiny_dataset, "labels"))) == 13

    def test_dataset(self, tiny_dataset):
        ds = Dataset(tiny_dataset)
        assert len(ds.questions) == 48
        assert len(ds.scene_ids()) == 12
        assert ds.has_labels()
        assert len(ds.items("train")) == 32
        assert len(ds.items("dev")) == 8
        lab = ds.labels(ds.scene_ids()[0])
        assert lab.n_objects == 3 and sorted(lab.rpe_bins) == [3, 7]

    def test_disjoint_scenes(self, tiny_dataset):
        ds = Dataset(tiny_dataset)
        seen = {}
        for split in ds.splits:
            for q in ds.items(split):
                assert seen.setdefault(q.scene_id, split) == split

    def test_errors(self, tiny_dataset, datadir):
        ds = Dataset(tiny_dataset)
        with pytest.raises(errors.DataError):
            ds.items("holdout")
        with pytest.raises(errors.DataError):
            Dataset(os.path.join(datadir, "missing"))
        with pytest.raises(errors.DataError):
            Dataset(datadir)
        assert not Dataset(tiny_dataset, labels_dir=datadir).has_labels()

    def test_deterministic(self, datadir):
        a, b = os.path.join(datadir, "a"), os.path.join(datadir, "b")
        spec = SceneSpec(n_objects=3)
        generate_dataset(a, 4, seed=2, questions_per_scene=3, spec=spec, workers=1)
        generate_dataset(b, 4, seed=2, questions_per_scene=3, spec=spec, workers=2)
        for name in ["questions.jsonl", "splits.json", "dataset.json"]:
            with open(os.path.join(a, name)) as fa, open(os.path.join(b, name)) as fb:
                assert fa.read() == fb.read()

    def test_no_scenes(self, datadir):
        with pytest.raises(errors.InvalidSpec):
            generate_dataset(datadir, 0)


class TestFeatures(object):
    def test_object_features(self, np, tiny_scene):
        feats, mask = object_features(tiny_scene, 6)
        assert feats.shape == (6, 15) and mask.tolist() == [True] * 4 + [False] * 2
        assert np.all(feats[:4, :3].sum(axis=1) == 1)
        assert np.all(feats[:4, 3:11].sum(axis=1) == 1)
        assert np.all(feats[4:] == 0)
        assert np.all((feats[:4, -4:] >= 0) & (feats[:4, -4:] <= 1))

    def test_truncate(self, tiny_scene):
        with pytest.warns(UserWarning):
            feats, mask = object_features(tiny_scene, 2)
        assert feats.shape == (2, 15) and mask.all()

    def test_relpos_rows(self, np):
        rpe = np.random.uniform(size=(4, 4, 3))
        assert np.array_equal(relpos_rows(rpe), rpe[:, 0, :])
        assert relpos_rows(rpe, pairwise=True).shape == (4, 12)


class TestAssemble(object):
    def test_plain(self, np, tiny_dataset, tiny_config):
        ds = Dataset(tiny_dataset)
        items = ds.items("train")
        arrays = assemble(ds, items, tiny_config, split="train")
        assert "oce" not in arrays and "patches" not in arrays
        assert arrays["obj_feats"].shape == (8, 3, 15)
        assert arrays["tokens"].shape == (32, 12)
        assert arrays["scene_index"].max() == 7
        spatial = arrays["is_spatial"]
        assert np.all(arrays["subject_index"][~spatial] == -1)
        assert np.all(arrays["axis"][~spatial] == -1)
        assert np.all(arrays["subject_index"][spatial] >= 0)
        assert np.all(arrays["axis"][spatial] >= 0)

    def test_labels(self, np, tiny_dataset, tiny_config):
        ds = Dataset(tiny_dataset)
        config = tiny_config.replace(sr_task="rpe", sr_mode="bins", num_bins=7)
        arrays = assemble(ds, ds.items("dev"), config)
        rpe = arrays["rpe"]
        assert np.allclose(rpe, -np.swapaxes(rpe, 1, 2))
        assert np.allclose(arrays["relpos"], rpe[:, :, 0, :])
        scene_id = sorted(set(q.scene_id for q in ds.items("dev")))[0]
        assert np.array_equal(arrays["rpe_bins"][0], ds.labels(scene_id).rpe_bins[7])
        assert arrays["oce_bins"].shape == (2, 3, 3)

    def test_requantize(self, np, tiny_dataset, tiny_config):
        """Bin counts missing from the label files are quantized on the fly."""
        ds = Dataset(tiny_dataset)
        config = tiny_config.replace(sr_task="rpe", sr_mode="bins", num_bins=15)
        arrays = assemble(ds, ds.items("test_iid"), config)
        spec = make_bin_spec(1.5, 15)
        expected = quantize(arrays["rpe"][0].astype(float), spec)
        assert np.array_equal(arrays["rpe_bins"][0], expected)

    def test_patches(self, np, tiny_dataset, tiny_config):
        ds = Dataset(tiny_dataset)
        pyramid = PyramidConfig(scales=(1,), overlap=0.0, patch_side=2)
        config = tiny_config.replace(use_patches=True, pyramid=pyramid)
        arrays = assemble(ds, ds.items("dev"), config)
        assert arrays["patches"].shape == (2, 2, 12)
        assert arrays["patches"].dtype == np.uint8

    def test_cache(self, np, tiny_dataset, tiny_config, datadir):
        ds = Dataset(tiny_dataset)
        items = ds.items("dev")
        a = assemble(ds, items, tiny_config, split="dev", cache_dir=datadir)
        files = os.listdir(datadir)
        assert len(files) == 1 and files[0].startswith("dev-")
        b = assemble(ds, items, tiny_config, split="dev", cache_dir=datadir)
        assert sorted(a) == sorted(b)
        for name in a:
            assert np.array_equal(a[name], b[name])
        assemble(ds, items[:3], tiny_config, split="dev", cache_dir=datadir)
        assert len(os.listdir(datadir)) == 2

    def test_empty(self, tiny_dataset, tiny_config):
        with pytest.raises(errors.NoData):
            assemble(Dataset(tiny_dataset), [], tiny_config)


class TestBatches(object):
    @pytest.fixture
    def arrays(self, tiny_dataset, tiny_config):
        ds = Dataset(tiny_dataset)
        config = tiny_config.replace(sr_task="oce", relpos_input="early")
        return assemble(ds, ds.items("train"), config)

    def test_make_batch(self, np, arrays):
        batch = make_batch(arrays, [0, 5, 9])
        assert len(batch) == 3
        assert batch.obj_feats.dtype == np.float32
        assert batch.oce.shape == (3, 3, 3) and batch.relpos.shape == (3, 3, 3)
        assert batch.rpe_bins is None and batch.patches is None
        assert np.array_equal(batch.answers, arrays["answers"][[0, 5, 9]])
        assert batch.pair_mask.sum() == 3 * 6

    def test_iter_batches(self, np, arrays):
        order = np.random.permutation(32)
        seen = []
        for idx, batch in iter_batches(arrays, 10, order=order):
            assert len(batch) == len(idx) <= 10
            seen.extend(idx)
        assert seen == list(order)
        assert len(list(iter_batches(arrays, 32))) == 1


def test_answer_index():
    assert sorted(dataset.ANSWER_INDEX.values()) == list(range(len(dataset.ANSWER_INDEX)))
