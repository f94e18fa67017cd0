import collections
import csv
import dataclasses
import os

import pytest

from sws import errors
from sws import nnkit
from sws.evalkit import read_predictions
from sws.model import SpatialVQAModel
from sws.selftest import random_batch, tiny_model_config
from sws.train import (
    METRIC_FIELDS,
    TrainConfig,
    few_shot_subsample,
    fewshot_sweep,
    sr_loss,
    total_loss,
    train,
    vqa_loss,
)

Question = collections.namedtuple("Question", ["question_id", "answer"])


@pytest.fixture
def questions():
    answers = ["left"] * 60 + ["right"] * 30 + ["red"] * 10
    return [Question("q{:03d}".format(n), a) for (n, a) in enumerate(answers)]


class TestLosses(object):
    def test_total_loss(self, np):
        assert total_loss(2.0, None, 0.9, 0.1) == pytest.approx(1.8)
        assert total_loss(1.0, 1.0, 0.7, 0.3) == pytest.approx(1.0)
        with pytest.raises(errors.NumericalError):
            total_loss(np.nan, 1.0, 0.9, 0.1)
        with pytest.raises(errors.ConfigError):
            total_loss(1.0, 1.0, 1.5, 0.1)

    def test_total_loss_graph(self):
        l_vqa = nnkit.Tensor(2.0, requires_grad=True)
        l_sr = nnkit.Tensor(3.0, requires_grad=True)
        loss = total_loss(l_vqa, l_sr, 0.9, 0.1)
        assert loss.item() == pytest.approx(2.1)
        loss.backward()
        assert l_vqa.grad == pytest.approx(0.9)
        assert l_sr.grad == pytest.approx(0.1)

    def test_sr_loss(self, np):
        c = tiny_model_config(sr_mode="regression", sr_task="oce+rpe")
        batch = random_batch(c, np.random.default_rng(0))
        out = SpatialVQAModel(c)(batch)
        oce = sr_loss(out, batch, "oce", "regression").item()
        rpe = sr_loss(out, batch, "rpe", "regression").item()
        joint = sr_loss(out, batch, "oce+rpe", "regression").item()
        assert oce > 0 and rpe > 0
        assert joint == pytest.approx((oce + rpe) / 2, rel=1e-5)
        with pytest.raises(errors.ContractError):
            sr_loss(out, batch, "none", "regression")

    def test_sr_loss_bins(self, np):
        c = tiny_model_config()
        batch = random_batch(c, np.random.default_rng(1))
        out = SpatialVQAModel(c)(batch)
        loss = sr_loss(out, batch, "rpe", "bins").item()
        # Close to uniform at initialization.
        assert 0.25 * np.log(7) < loss < 3 * np.log(7)

    def test_perfect_regression(self, np):
        """Predicting the labels exactly gives a zero loss."""
        c = tiny_model_config(sr_mode="regression")
        batch = random_batch(c, np.random.default_rng(2))
        out = SpatialVQAModel(c)(batch)
        batch.oce = out.oce.data.copy()
        batch.rpe = out.rpe.data.copy()
        assert sr_loss(out, batch, "oce+rpe", "regression").item() == pytest.approx(0)

    def test_linear_in_beta(self, np, float64):
        c = tiny_model_config()
        batch = random_batch(c, np.random.default_rng(3))
        out = SpatialVQAModel(c)(batch)
        l_vqa, l_sr = vqa_loss(out, batch), sr_loss(out, batch, "rpe", "bins")
        one = total_loss(l_vqa, l_sr, 0.7, 0.25).item()
        two = total_loss(l_vqa, l_sr, 0.7, 0.5).item()
        assert two - one == pytest.approx(0.25 * l_sr.item(), rel=1e-6)
        assert total_loss(0.0, 0.0, 0.7, 0.3) == 0.0

    def test_gradient_isolation(self, np, float64):
        """Halving alpha halves the answer-head gradients and leaves the
        pairwise bin head alone."""
        c = tiny_model_config()
        model = SpatialVQAModel(c)
        batch = random_batch(c, np.random.default_rng(4))

        def grads(alpha):
            model.zero_grad()
            out = model(batch)
            loss = total_loss(vqa_loss(out, batch), sr_loss(out, batch, "rpe", "bins"),
                              alpha, 0.3)
            loss.backward()
            return {name: p.grad.copy() for (name, p) in model.named_parameters()
                    if p.grad is not None}

        full, half = grads(0.5), grads(0.25)
        vqa = [name for name in full if name.startswith("vqa_head.")]
        pair = [name for name in full if name.startswith("pair_bin_head.")]
        assert vqa and pair
        for name in vqa:
            assert np.allclose(half[name], full[name] / 2, rtol=1e-9, atol=0)
        for name in pair:
            assert np.allclose(half[name], full[name], rtol=1e-9, atol=0)

    @pytest.mark.parametrize("mode", ["regression", "bins"])
    def test_padding(self, np, float64, mode):
        """Targets of padded objects neither change the loss nor the gradient."""
        c = tiny_model_config(sr_mode=mode, sr_task="oce+rpe")
        batch = random_batch(c, np.random.default_rng(5))
        assert not batch.obj_mask[0, -1]
        out = SpatialVQAModel(c)(batch)

        other = dataclasses.replace(
            batch, oce=batch.oce.copy(), rpe=batch.rpe.copy(),
            oce_bins=batch.oce_bins.copy(), rpe_bins=batch.rpe_bins.copy(),
        )
        other.oce[0, -1] = 0.0
        other.rpe[0, -1] += 0.5
        other.rpe[0, :, -1] -= 0.5
        other.oce_bins[0, -1] = (other.oce_bins[0, -1] + 1) % c.num_bins
        other.rpe_bins[0, -1] = (other.rpe_bins[0, -1] + 1) % c.num_bins
        other.rpe_bins[0, :, -1] = (other.rpe_bins[0, :, -1] + 1) % c.num_bins
        loss = sr_loss(out, batch, c.sr_task, mode)
        assert sr_loss(out, other, c.sr_task, mode).item() == pytest.approx(loss.item())

        loss.backward()
        if mode == "regression":
            grads = [out.oce.grad[0, -1]]
        else:
            grads = [out.oce_logits.grad[0, -1], out.rpe_logits.grad[0, -1],
                     out.rpe_logits.grad[0, :, -1]]
        for g in grads:
            assert np.all(g == 0)

    @pytest.mark.parametrize("mode", ["regression", "bins"])
    def test_diagonal_ignored(self, np, mode):
        c = tiny_model_config(sr_mode=mode)
        batch = random_batch(c, np.random.default_rng(6))
        out = SpatialVQAModel(c)(batch)
        loss = sr_loss(out, batch, "rpe", mode).item()
        N = c.max_objects
        diagonal = (slice(None), np.arange(N), np.arange(N))
        batch.rpe = batch.rpe.copy()
        batch.rpe_bins = batch.rpe_bins.copy()
        batch.rpe[diagonal] = 0.75
        batch.rpe_bins[diagonal] = 0
        assert sr_loss(out, batch, "rpe", mode).item() == loss


class TestFewShot(object):
    def test_size(self, questions):
        for fraction in (0.01, 0.05, 0.1, 0.25, 0.5, 1.0):
            subset = few_shot_subsample(questions, fraction, seed=0)
            assert len(subset) == int(fraction * 100 + 0.5)
        assert few_shot_subsample(questions, 1.0, 0) == questions

    def test_nested(self, questions):
        previous = set()
        for fraction in (0.05, 0.1, 0.25, 0.5, 1.0):
            ids = set(q.question_id for q in few_shot_subsample(questions, fraction, 3))
            assert previous <= ids
            previous = ids

    def test_stratified(self, questions):
        subset = few_shot_subsample(questions, 0.5, seed=1)
        counts = collections.Counter(q.answer for q in subset)
        assert abs(counts["left"] - 30) <= 1
        assert abs(counts["right"] - 15) <= 1
        assert abs(counts["red"] - 5) <= 1

    def test_seeds(self, questions):
        a = few_shot_subsample(questions, 0.25, seed=0)
        assert a == few_shot_subsample(questions, 0.25, seed=0)
        assert a != few_shot_subsample(questions, 0.25, seed=1)
        # Original order is kept.
        assert a == sorted(a)

    def test_errors(self, questions):
        with pytest.raises(errors.EmptySubset):
            few_shot_subsample(questions[:10], 0.01, 0)
        with pytest.raises(errors.ConfigError):
            few_shot_subsample(questions, 0.0, 0)


class TestTrainConfig(object):
    def test_paper(self):
        tc = TrainConfig.paper()
        assert (tc.lr, tc.batch_size, tc.epochs) == (1e-5, 64, 20)

    @pytest.mark.parametrize(
        "kw",
        [dict(fraction=0.0), dict(fraction=1.5), dict(alpha=0.0), dict(lr=-1.0),
         dict(epochs=0), dict(loss_mode="bins(x)"), dict(loss_mode="ranking")],
    )
    def test_invalid(self, kw):
        with pytest.raises(errors.ConfigError):
            TrainConfig(**kw)

    def test_resolve(self):
        c = tiny_model_config()
        assert TrainConfig().resolve(c) is c
        assert TrainConfig(alpha=0.5).resolve(c).alpha == 0.5
        assert TrainConfig(loss_mode="bins(7)").resolve(c) == c
        with pytest.raises(errors.ConfigError):
            TrainConfig(loss_mode="bins(15)").resolve(c)
        with pytest.raises(errors.ConfigError):
            TrainConfig(loss_mode="regression").resolve(c)

    def test_serialization(self):
        tc = TrainConfig(eval_splits=["dev"])
        assert tc.eval_splits == ("dev",)
        assert TrainConfig.from_json(tc.to_json()) == tc


class TestTrain(object):
    @pytest.fixture
    def config(self, tiny_config):
        return tiny_config.replace(sr_task="rpe", sr_mode="bins", num_bins=7,
                                   relpos_input="early")

    def test_outputs(self, np, tiny_dataset, config, datadir):
        tc = TrainConfig(epochs=2, batch_size=8, lr=1e-3)
        result = train(config, tc, tiny_dataset, datadir)
        for name in ["model_config.json", "train_config.json", "best.ckpt",
                     "metrics.csv"]:
            assert os.path.exists(os.path.join(datadir, name))
        assert result.best_epoch in (1, 2)
        assert [(r["epoch"], r["split"]) for r in result.rows] == [
            (1, "train"), (1, "dev"), (2, "train"), (2, "dev")]

        with open(result.metrics) as f:
            rows = list(csv.DictReader(f))
        assert tuple(rows[0]) == METRIC_FIELDS
        assert len(rows) == 4
        assert all(0 <= float(r["vqa_acc"]) <= 1 for r in rows)
        assert all(np.isfinite(float(r["total_loss"])) for r in rows)

        header, state = nnkit.load_checkpoint(result.checkpoint)
        assert header["epoch"] == result.best_epoch
        assert header["config_hash"] == config.config_hash()

        assert "dev" in result.predictions and "test_iid" in result.predictions
        records = read_predictions(result.predictions["test_iid"])
        assert len(records) == 4
        for r in records:
            if "sr" in r:
                assert r["sr"]["C"] == 7 and len(r["sr"]["bins"]) == 3
                assert all(0 <= b < 7 for b in r["sr"]["bins"])

    def test_baseline_metrics(self, tiny_dataset, tiny_config, datadir):
        """Without an SR task the sr_loss column is left out."""
        tc = TrainConfig(epochs=1, batch_size=16, eval_splits=("dev",))
        result = train(tiny_config, tc, tiny_dataset, datadir)
        with open(result.metrics) as f:
            fields = next(csv.reader(f))
        assert "sr_loss" not in fields
        assert list(result.predictions) == ["dev"]

    def test_deterministic(self, tiny_dataset, config, datadir):
        tc = TrainConfig(epochs=1, batch_size=8, seed=4)
        a = train(config, tc, tiny_dataset, os.path.join(datadir, "a"))
        b = train(config, tc, tiny_dataset, os.path.join(datadir, "b"))
        for name in ("metrics", "checkpoint"):
            with open(getattr(a, name), "rb") as fa, open(getattr(b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_fraction(self, tiny_dataset, tiny_config, datadir):
        tc = TrainConfig(epochs=1, batch_size=8, fraction=0.25, eval_splits=())
        result = train(tiny_config, tc, tiny_dataset, datadir)
        assert result.predictions == {}
        with pytest.raises(errors.EmptySubset):
            train(tiny_config, tc.replace(fraction=0.01), tiny_dataset, datadir)

    def test_missing_labels(self, tiny_dataset, config, datadir):
        with pytest.raises(errors.DataError):
            train(config, TrainConfig(epochs=1), tiny_dataset,
                  os.path.join(datadir, "out"), labels_dir=datadir)


def test_fewshot_sweep(tiny_dataset, tiny_config, datadir):
    methods = {"baseline": tiny_config,
               "weak_spatial_bins": tiny_config.replace(sr_task="rpe", sr_mode="bins",
                                                        num_bins=7)}
    tc = TrainConfig(epochs=1, batch_size=16)
    rows = fewshot_sweep(methods, tc, tiny_dataset, datadir, fractions=(0.01, 0.5),
                         seeds=(0,), workers=1)
    assert sorted((r["method"], r["fraction"]) for r in rows) == [
        ("baseline", 0.5), ("weak_spatial_bins", 0.5)]
    for r in rows:
        assert 0 <= r["spatial_accuracy"] <= 1
    run = os.path.join(datadir, "baseline", "fraction-0.5", "seed-0")
    assert os.path.exists(os.path.join(run, "predictions", "test_iid.jsonl"))
