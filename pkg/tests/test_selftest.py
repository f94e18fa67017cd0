import glob
import os

import numpy
import pytest

from sws import cli
from sws import selftest
from sws.dataset import Dataset, generate_dataset, write_dataset_labels
from sws.evalkit import consistency_audit
from sws.geometry import make_bin_spec
from sws.labels import FileDepthSource, dataset_depth_max, read_labels
from sws.scenegen import SceneSpec


def test_binning():
    results = selftest.check_binning()
    assert [r.name for r in results] == ["binning C={}".format(C)
                                         for C in (3, 7, 15, 30)]
    assert all(r.passed for r in results), [r.detail for r in results]


def test_labels_files(tiny_dataset):
    paths = glob.glob(os.path.join(tiny_dataset, "labels", "*.srlb"))
    (result,) = selftest.check_labels_files(paths)
    assert result.passed and "12 files" in result.name


def test_label_determinism(datadir):
    results = selftest.check_label_determinism(datadir)
    assert all(r.passed for r in results)


@pytest.mark.slow
def test_gradients():
    results = selftest.check_gradients(seeds=(0,))
    names = [r.name for r in results]
    assert "grad model (bins) seed=0" in names
    assert "grad model (regression) seed=0" in names
    assert all(r.passed for r in results), [(r.name, r.detail) for r in results]


@pytest.mark.slow
def test_training_determinism(datadir):
    (result,) = selftest.check_training_determinism(datadir)
    assert result.passed


@pytest.mark.slow
def test_cli_selftest(datadir, capsys):
    out = os.path.join(datadir, "out")
    assert cli.dispatch(["selftest", "--quick", "--workdir", datadir,
                         "--out", out]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert os.path.exists(os.path.join(out, "selftest.manifest.json"))


def label_records(data):
    """Return the spatial questions of `data` and the SR records read from its
    label files, as regression deltas and as bins for every stored C."""
    ds = Dataset(data)
    items = [q for q in ds.questions if q.is_spatial]
    deltas, bins = {}, {}
    for q in items:
        scene, lab = ds.scene(q.scene_id), ds.labels(q.scene_id)
        i, j = scene.index(q.subject_id), scene.index(q.object_id)
        deltas[q.question_id] = dict(delta=lab.rpe[i, j].tolist())
        for C, b in lab.rpe_bins.items():
            bins.setdefault(C, {})[q.question_id] = dict(bins=b[i, j].tolist(), C=C)
    return items, deltas, bins


def audit_labels(data):
    """Audit the gold answers of `data` against its own label files."""
    items, deltas, bins = label_records(data)
    answers = {q.question_id: q.answer for q in items}
    audits = [consistency_audit(items, answers, deltas, make_bin_spec(1.5, C))
              for C in (3, 15)]
    audits.extend(consistency_audit(items, answers, records, make_bin_spec(1.5, C))
                  for (C, records) in sorted(bins.items()))
    return audits


def test_oracle_audit(tiny_dataset):
    """The stored labels never contradict the generated answers."""
    audits = audit_labels(tiny_dataset)
    assert len(audits) == 4
    for audit in audits:
        assert audit.consistency_rate == 1.0
        assert audit.n_inconsistent == 0 and audit.n_gaps == 0
        assert audit.n_audited > 0


@pytest.mark.bench
class TestAcceptance(object):
    """Geometry and label checks on 500 generated scenes."""

    @pytest.fixture(scope="class")
    def data(self, tmp_path_factory):
        directory = str(tmp_path_factory.mktemp("acceptance") / "data")
        generate_dataset(directory, 500, seed=1, questions_per_scene=2,
                         spec=SceneSpec())
        write_dataset_labels(directory)
        return directory

    def test_centroids(self, data):
        """Label centroids sit on the pinhole projection of the true centers."""
        ds = Dataset(data)
        worst = 0.0
        for scene_id in ds.scene_ids():
            scene, lab = ds.scene(scene_id), ds.labels(scene_id)
            cam = scene.camera
            x, y, z = numpy.array([o.center_m for o in scene.objects]).T
            u = (cam.focal_px * x / z + cam.principal[0]) / cam.width_px
            v = (cam.focal_px * y / z + cam.principal[1]) / cam.height_px
            err = numpy.abs(lab.oce[:, :2] - numpy.stack([u, v], axis=1))
            worst = max(worst, float(err.max()))
        assert worst < 0.02

    def test_label_audit(self, data):
        for audit in audit_labels(data):
            assert audit.consistency_rate == 1.0
            assert audit.n_inconsistent == 0

    def test_depth_rank(self, data):
        ds = Dataset(data)
        depth_max = dataset_depth_max(FileDepthSource(
            os.path.join(data, "depth")).paths())
        agree = total = 0
        for scene_id in ds.scene_ids():
            scene, lab = ds.scene(scene_id), ds.labels(scene_id)
            objects = scene.objects
            for i in range(len(objects)):
                for j in range(i + 1, len(objects)):
                    dz = objects[i].center_m[2] - objects[j].center_m[2]
                    if abs(dz) < 0.2 * depth_max:
                        continue
                    total += 1
                    agree += numpy.sign(lab.oce[i, 2] - lab.oce[j, 2]) == numpy.sign(dz)
        assert total > 0 and agree >= 0.95 * total

    def test_label_files(self, data):
        for filename in glob.glob(os.path.join(data, "labels", "*.srlb")):
            lab = read_labels(filename)
            assert numpy.array_equal(lab.rpe, -numpy.swapaxes(lab.rpe, 0, 1))
        (result,) = selftest.check_labels_files(
            glob.glob(os.path.join(data, "labels", "*.srlb")))
        assert result.passed
