"""Comparative training runs.

The `bench` classes train on a generated dataset of 2,000 scenes and take
tens of CPU minutes; run them with ``nox -s bench``.
"""
import collections
import os

import pytest

from sws.dataset import Dataset, generate_dataset, write_dataset_labels
from sws.evalkit import evaluate, read_predictions
from sws.model import ModelConfig
from sws.train import FEWSHOT_FRACTIONS, TrainConfig, fewshot_sweep, train

SEEDS = (0, 1, 2)


def train_losses(rows):
    return [r["total_loss"] for r in rows if r["split"] == "train"]


def mean(values):
    values = list(values)
    return sum(values) / len(values)


@pytest.mark.slow
def test_loss_decreases(tiny_dataset, tiny_config, datadir):
    config = tiny_config.replace(sr_task="rpe", sr_mode="bins", num_bins=7,
                                 relpos_input="early")
    decreased = 0
    for seed in SEEDS:
        tc = TrainConfig(epochs=3, batch_size=8, lr=1e-3, seed=seed, eval_splits=())
        result = train(config, tc, tiny_dataset, os.path.join(datadir, str(seed)))
        losses = train_losses(result.rows)
        assert len(losses) == 3
        decreased += losses[-1] < losses[0]
    assert decreased >= 2


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    directory = str(tmp_path_factory.mktemp("experiments") / "data")
    generate_dataset(directory, 2000, seed=3, questions_per_scene=5, ood_shift=0.5)
    write_dataset_labels(directory, bins=(15,))
    return directory


@pytest.fixture(scope="module")
def methods():
    presets = ModelConfig.ablations(hidden=32, heads=4, lang_layers=1, vis_layers=1,
                                    cross_layers=1, fusion_layers=1)
    return collections.OrderedDict(
        (name, presets[name]) for name in ("baseline", "full")
    )


@pytest.fixture(scope="module")
def train_config():
    return TrainConfig(epochs=3, batch_size=32, lr=1e-3)


@pytest.mark.bench
class TestComparison(object):
    """The SR-supervised model against the plain baseline, 3 seeds each."""

    @pytest.fixture(scope="class")
    def reports(self, data, methods, train_config, tmp_path_factory):
        out = tmp_path_factory.mktemp("runs")
        dataset = Dataset(data)
        reports = {}
        for name, config in methods.items():
            for seed in SEEDS:
                result = train(config, train_config.replace(seed=seed), data,
                               str(out / name / str(seed)))
                reports[name, seed] = row = dict(losses=train_losses(result.rows))
                for split in ("test_iid", "test_ood"):
                    predictions = read_predictions(result.predictions[split])
                    row[split] = evaluate(dataset.items(split), predictions,
                                          split=split)
        return reports

    def spatial(self, reports, method, split):
        return mean(reports[method, s][split].spatial_accuracy for s in SEEDS)

    def test_loss_decreases(self, reports):
        for method in ("baseline", "full"):
            losses = [reports[method, s]["losses"] for s in SEEDS]
            assert sum(r[-1] < r[0] for r in losses) >= 2

    def test_spatial_accuracy(self, reports):
        gain = (self.spatial(reports, "full", "test_iid")
                - self.spatial(reports, "baseline", "test_iid"))
        assert gain >= 0.02

    def test_consistency(self, reports):
        rates = {
            method: mean(reports[method, s]["test_iid"].inconsistency_rate
                         for s in SEEDS)
            for method in ("baseline", "full")
        }
        assert rates["full"] < rates["baseline"]

    def test_ood_drop(self, reports):
        drops = {
            method: self.spatial(reports, method, "test_iid")
            - self.spatial(reports, method, "test_ood")
            for method in ("baseline", "full")
        }
        assert drops["full"] <= drops["baseline"] + 0.01


@pytest.mark.bench
def test_fewshot(data, methods, train_config, tmp_path):
    rows = fewshot_sweep(methods, train_config, data, str(tmp_path),
                         fractions=FEWSHOT_FRACTIONS, seeds=SEEDS)
    curves = collections.defaultdict(list)
    for r in rows:
        curves[r["method"], r["fraction"]].append(r["spatial_accuracy"])
    assert all(len(curves[key]) == len(SEEDS) for key in curves)
    wins = sum(
        mean(curves["full", f]) >= mean(curves["baseline", f])
        for f in FEWSHOT_FRACTIONS
    )
    assert wins >= 4
