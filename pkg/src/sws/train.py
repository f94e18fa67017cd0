r"""Joint training of the answer and spatial-reasoning objectives.

The total loss is

.. math::
   L = \alpha L_{\text{VQA}} + \beta L_{\text{SR}},
   \qquad \alpha, \beta \in (0, 1],

with :math:`(\alpha, \beta)` defaulting to `(0.9, 0.1)` for regression and
`(0.7, 0.3)` for bin classification.  With ``sr_task="none"`` the SR term is
dropped rather than weighted by zero.

>>> total_loss(1.0, 2.0, 0.9, 0.1)
1.1
>>> total_loss(0.0, 0.0, 0.7, 0.3)
0.0
>>> total_loss(1.0, 2.0, 0.9, 0.0)
Traceback (most recent call last):
    ...
ConfigError: beta must be in (0, 1], got 0.0
"""
from concurrent.futures import ProcessPoolExecutor
import collections
import csv
import dataclasses
import logging
import math
import os
import re
import typing
import warnings

import numpy as np

from . import errors
from . import nnkit
from .dataset import Dataset, assemble, iter_batches
from .evalkit import consistency_audit, evaluate, read_predictions, write_predictions
from .geometry import make_bin_spec
from .model import ModelConfig, SpatialVQAModel
from .nnkit import Tensor
from .objects import Record
from .scenegen import ANSWERS, worker_count

__all__ = [
    "PAPER_LR",
    "TrainConfig",
    "TrainResult",
    "total_loss",
    "vqa_loss",
    "sr_loss",
    "few_shot_subsample",
    "predict",
    "train",
    "fewshot_sweep",
    "METRIC_FIELDS",
    "FEWSHOT_FRACTIONS",
]

_LOGGER = logging.getLogger(__name__)

PAPER_LR = 1e-5
METRIC_FIELDS = (
    "epoch",
    "split",
    "vqa_acc",
    "spatial_acc",
    "sr_loss",
    "vqa_loss",
    "total_loss",
    "consistency",
)
FEWSHOT_FRACTIONS = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)
CHECKPOINT = "best.ckpt"
METRICS = "metrics.csv"

_LOSS_MODE = re.compile(r"^(regression|bins)(?:\((\d+)\))?$")


def _check_coefficient(name, value):
    if not 0 < value <= 1:
        raise errors.ConfigError("{} must be in (0, 1], got {}".format(name, value))


@dataclasses.dataclass(frozen=True, repr=False)
class TrainConfig(Record):
    """Optimization settings.

    `alpha` and `beta` override the model's loss coefficients when given.
    `loss_mode` (``"regression"`` or ``"bins(C)"``) is optional and, when
    given, must agree with the model's SR head.
    """

    lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    alpha: typing.Optional[float] = None
    beta: typing.Optional[float] = None
    fraction: float = 1.0
    loss_mode: typing.Optional[str] = None
    eval_splits: tuple = ("dev", "test_iid", "test_ood")
    data_format: str = "npz"

    def __post_init__(self):
        object.__setattr__(self, "eval_splits", tuple(self.eval_splits))
        if not 0 < self.fraction <= 1:
            raise errors.ConfigError(
                "fraction must be in (0, 1], got {}".format(self.fraction)
            )
        for name in ("alpha", "beta"):
            if getattr(self, name) is not None:
                _check_coefficient(name, getattr(self, name))
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise errors.ConfigError("lr must be positive, got {}".format(self.lr))
        if self.batch_size < 1 or self.epochs < 1:
            raise errors.ConfigError("batch_size and epochs must be >= 1")
        if self.loss_mode is not None and not _LOSS_MODE.match(self.loss_mode):
            raise errors.ConfigError(
                "loss_mode must be 'regression' or 'bins(C)', got {!r}".format(
                    self.loss_mode
                )
            )

    @classmethod
    def paper(cls, **kw):
        """Full-scale protocol: lr 1e-5, batch 64, 20 epochs."""
        args = dict(lr=PAPER_LR, batch_size=64, epochs=20)
        args.update(kw)
        return cls(**args)

    def resolve(self, model_config):
        """Return `model_config` with this config's loss settings applied."""
        if self.loss_mode is not None:
            mode, C = _LOSS_MODE.match(self.loss_mode).groups()
            if mode != model_config.sr_mode or (
                C is not None and int(C) != model_config.num_bins
            ):
                raise errors.ConfigError(
                    "loss_mode={!r} does not match the model (sr_mode={!r}, "
                    "num_bins={})".format(
                        self.loss_mode, model_config.sr_mode, model_config.num_bins
                    )
                )
        kw = {k: getattr(self, k) for k in ("alpha", "beta") if getattr(self, k)}
        return model_config.replace(**kw) if kw else model_config


@dataclasses.dataclass
class TrainResult(object):
    out_dir: str
    checkpoint: str
    metrics: str
    predictions: dict
    rows: list
    best_epoch: int


######################################################################
# Losses
def _value(x):
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(l_vqa, l_sr, alpha, beta):
    """Return `alpha * l_vqa + beta * l_sr` (`l_sr=None` drops the term).

    Works on floats and on scalar tensors (keeping the graph).
    """
    _check_coefficient("alpha", alpha)
    _check_coefficient("beta", beta)
    terms = [l_vqa] if l_sr is None else [l_vqa, l_sr]
    for x in terms:
        if not math.isfinite(_value(x)):
            raise errors.NumericalError("Non-finite loss {}".format(_value(x)))
    if not any(isinstance(x, Tensor) for x in terms):
        return alpha * float(l_vqa) + (0.0 if l_sr is None else beta * float(l_sr))
    loss = nnkit.scale(nnkit.Tensor(l_vqa) if not isinstance(l_vqa, Tensor) else l_vqa,
                       alpha)
    if l_sr is not None:
        l_sr = l_sr if isinstance(l_sr, Tensor) else nnkit.Tensor(l_sr)
        loss = nnkit.add(loss, nnkit.scale(l_sr, beta))
    return loss


def vqa_loss(outputs, batch):
    return nnkit.cross_entropy(outputs.vqa_logits, batch.answers)


def sr_loss(outputs, batch, sr_task, sr_mode):
    """Return the SR loss of `outputs` against the labels in `batch`.

    Regression uses the mean squared error over valid objects (``oce``) or
    valid ordered pairs of distinct objects (``rpe``); bin classification
    the mean cross-entropy over the same cells and every dimension.  The
    joint ``oce+rpe`` task averages both.
    """
    if sr_task == "none":
        raise errors.ContractError("sr_loss called with sr_task='none'")
    losses = []
    if sr_task in ("oce", "oce+rpe"):
        mask = batch.obj_mask[..., None]
        if sr_mode == "regression":
            losses.append(nnkit.mse(outputs.oce, batch.oce, mask))
        else:
            losses.append(
                nnkit.cross_entropy(outputs.oce_logits, batch.oce_bins, axis=2,
                                    mask=mask)
            )
    if sr_task in ("rpe", "oce+rpe"):
        mask = batch.pair_mask[..., None]
        if sr_mode == "regression":
            losses.append(nnkit.mse(outputs.rpe, batch.rpe, mask))
        else:
            losses.append(
                nnkit.cross_entropy(outputs.rpe_logits, batch.rpe_bins, axis=3,
                                    mask=mask)
            )
    if len(losses) == 1:
        return losses[0]
    return nnkit.scale(nnkit.add(*losses), 0.5)


######################################################################
# Few-shot subsets
def _stratified_order(items, seed, key):
    """Return item indices ordered so that every prefix is stratified.

    Items of a class of size `n` are shuffled and given the keys
    `(k + 0.5)/n`; sorting all items by key spreads each class evenly along
    the order.
    """
    groups = collections.defaultdict(list)
    for n, item in enumerate(items):
        groups[key(item)].append(n)
    rng = np.random.default_rng(seed)
    ranked = []
    for g, label in enumerate(sorted(groups)):
        members = groups[label]
        for k, p in enumerate(rng.permutation(len(members))):
            ranked.append(((k + 0.5) / len(members), g, k, members[p]))
    ranked.sort()
    return [r[-1] for r in ranked]


def few_shot_subsample(items, fraction, seed, key=None):
    """Return a deterministic, answer-stratified subset of `items`.

    The subset has `round(fraction * len(items))` items in their original
    order.  Subsets of one seed are nested: a smaller fraction selects a
    prefix of the same ordering.

    >>> items = list('aaaaaabbbc')
    >>> few_shot_subsample(items, 1.0, 0) == items
    True
    >>> sorted(few_shot_subsample(items, 0.5, 0))
    ['a', 'a', 'a', 'b', 'b']
    """
    if not 0 < fraction <= 1:
        raise errors.ConfigError("fraction must be in (0, 1], got {}".format(fraction))
    items = list(items)
    if key is None:
        key = lambda q: q.answer if hasattr(q, "answer") else q  # noqa: E731
    size = int(math.floor(fraction * len(items) + 0.5))
    if size == 0:
        raise errors.EmptySubset(
            "fraction={} of {} items is empty".format(fraction, len(items))
        )
    keep = sorted(_stratified_order(items, seed, key)[:size])
    return [items[n] for n in keep]


######################################################################
# Epoch statistics
class _Tally(object):
    """Running sums over the batches of one pass."""

    def __init__(self):
        self.n = self.correct = self.n_spatial = self.spatial_correct = 0
        self.losses = collections.defaultdict(float)
        self.batches = 0

    def add(self, out, batch, arrays, idx, losses):
        predicted = np.argmax(out.vqa_logits.data, axis=-1)
        hits = predicted == batch.answers
        spatial = arrays["is_spatial"][idx]
        self.n += len(hits)
        self.correct += int(hits.sum())
        self.n_spatial += int(spatial.sum())
        self.spatial_correct += int((hits & spatial).sum())
        for name, loss in losses.items():
            if loss is not None:
                self.losses[name] += _value(loss) * len(hits)

    def row(self, epoch, split, consistency=None):
        return dict(
            epoch=epoch,
            split=split,
            vqa_acc=self.correct / self.n,
            spatial_acc=self.spatial_correct / self.n_spatial if self.n_spatial else None,
            sr_loss=self.losses["sr_loss"] / self.n if "sr_loss" in self.losses else None,
            vqa_loss=self.losses["vqa_loss"] / self.n,
            total_loss=self.losses["total_loss"] / self.n,
            consistency=consistency,
        )


def _losses(model, out, batch):
    c = model.config
    l_vqa = vqa_loss(out, batch)
    l_sr = None if c.sr_task == "none" else sr_loss(out, batch, c.sr_task, c.sr_mode)
    return dict(vqa_loss=l_vqa, sr_loss=l_sr,
                total_loss=total_loss(l_vqa, l_sr, c.alpha, c.beta))


def _sr_record(out, config, q, i, j, k):
    rec = dict(pair=[q.subject_id, q.object_id], index=[int(i), int(j)])
    if config.sr_mode == "regression":
        rec["delta"] = [float(x) for x in out.rpe.data[k, i, j]]
    else:
        rec["bins"] = [int(c) for c in np.argmax(out.rpe_logits.data[k, i, j], axis=0)]
        rec["C"] = config.num_bins
    return rec


def predict(model, arrays, items, batch_size=64, with_losses=True):
    """Return `(records, tally)` for `items` without recording a graph.

    `records` are prediction-file dicts; SR records are attached to spatial
    questions whose objects fit in the model.
    """
    config = model.config
    records = []
    tally = _Tally()
    model.eval()
    N = config.max_objects
    with nnkit.no_grad():
        for idx, batch in iter_batches(arrays, batch_size, dtype=model.cls.dtype):
            out = model(batch)
            losses = _losses(model, out, batch) if with_losses else {}
            tally.add(out, batch, arrays, idx, losses)
            answers = np.argmax(out.vqa_logits.data, axis=-1)
            for k, n in enumerate(idx):
                q = items[n]
                rec = dict(question_id=q.question_id, answer=ANSWERS[answers[k]])
                i, j = arrays["subject_index"][n], arrays["object_index"][n]
                if q.is_spatial and 0 <= i < N and 0 <= j < N:
                    rec["sr"] = _sr_record(out, config, q, i, j, k)
                records.append(rec)
    model.train()
    return records, tally


def _consistency(items, records, config):
    spec = make_bin_spec(1.5, config.num_bins if config.sr_mode == "bins" else 15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", errors.AuditGap)
        try:
            audit = consistency_audit(
                items,
                {r["question_id"]: r["answer"] for r in records},
                {r["question_id"]: r["sr"] for r in records if "sr" in r},
                spec,
            )
        except errors.EmptyEval:
            return None
    return audit.consistency_rate


def _format(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "%.6f" % value
    return value


def write_metrics(filename, rows, with_sr=True):
    fields = [f for f in METRIC_FIELDS if with_sr or f != "sr_loss"]
    with open(filename, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row[k]) for k in fields})


######################################################################
# Training
def train(model_config, train_config, data_dir, out_dir, labels_dir=None,
          cache_dir=None):
    """Train a model on the ``train`` split of the dataset in `data_dir`.

    Writes to `out_dir`:

    * ``metrics.csv``: one train row and one dev row per epoch;
    * ``best.ckpt``: the parameters of the epoch with the highest dev VQA
      accuracy (ties broken by lower SR loss);
    * ``predictions/<split>.jsonl`` for each of ``eval_splits`` from the best
      checkpoint.

    A :class:`NumericalError` stops training after writing the metrics so
    far; the best checkpoint written before is kept.
    """
    tc = train_config
    model_config = tc.resolve(model_config)
    c = model_config
    dataset = Dataset(data_dir, labels_dir)
    if (c.sr_task != "none" or c.relpos_input != "none") and not dataset.has_labels():
        raise errors.DataError("Label files missing in {}".format(dataset.labels_dir))

    items = dataset.items("train")
    if tc.fraction < 1:
        items = few_shot_subsample(items, tc.fraction, tc.seed)
    kw = dict(cache_dir=cache_dir, data_format=tc.data_format)
    arrays = assemble(dataset, items, c, "train", **kw)
    dev_items = dataset.items("dev") if "dev" in dataset.splits else []
    dev_arrays = assemble(dataset, dev_items, c, "dev", **kw) if dev_items else None

    os.makedirs(out_dir, exist_ok=True)
    c.save(os.path.join(out_dir, "model_config.json"))
    tc.save(os.path.join(out_dir, "train_config.json"))
    checkpoint = os.path.join(out_dir, CHECKPOINT)
    metrics = os.path.join(out_dir, METRICS)
    with_sr = c.sr_task != "none"

    model = SpatialVQAModel(c, seed=tc.seed)
    optimizer = nnkit.Adam(model.parameters(), lr=tc.lr)
    _LOGGER.info(
        "Training %d parameters on %d questions (%s)",
        model.num_parameters(), len(items), c.sr_task,
    )
    header = dict(
        config_hash=c.config_hash(),
        model_config=c.to_dict(),
        train_config=tc.to_dict(),
        seed=tc.seed,
    )
    rows, best, best_epoch, step = [], None, 0, 0
    n = len(items)
    for epoch in range(1, tc.epochs + 1):
        order = np.random.default_rng([tc.seed, epoch]).permutation(n)
        tally = _Tally()
        try:
            for idx, batch in iter_batches(arrays, tc.batch_size, order,
                                           dtype=model.cls.dtype):
                out = model(batch)
                losses = _losses(model, out, batch)
                optimizer.zero_grad()
                losses["total_loss"].backward()
                optimizer.step()
                step += 1
                tally.add(out, batch, arrays, idx, losses)
                _LOGGER.debug("step %d: loss %.6f", step, losses["total_loss"].item())
        except errors.NumericalError:
            _LOGGER.error("Numerical failure at epoch %d, step %d", epoch, step)
            write_metrics(metrics, rows, with_sr)
            raise
        rows.append(tally.row(epoch, "train"))
        selected = rows[-1]
        if dev_arrays is not None:
            records, dev = predict(model, dev_arrays, dev_items, tc.batch_size)
            rows.append(dev.row(epoch, "dev", _consistency(dev_items, records, c)))
            selected = rows[-1]
        score = (selected["vqa_acc"], -(selected["sr_loss"] or 0.0))
        if best is None or score > best:
            best, best_epoch = score, epoch
            nnkit.save_checkpoint(checkpoint, model, dict(header, step=step, epoch=epoch))
        write_metrics(metrics, rows, with_sr)
        _LOGGER.info(
            "epoch %d: loss %.4f, dev acc %s", epoch, rows[-1]["total_loss"],
            _format(selected["vqa_acc"]),
        )

    _, state = nnkit.load_checkpoint(checkpoint)
    model.load_state_dict(state)
    predictions = {}
    for split in tc.eval_splits:
        split_items = dataset.items(split) if split in dataset.splits else []
        if not split_items:
            continue
        split_arrays = assemble(dataset, split_items, c, split, **kw)
        records, _ = predict(model, split_arrays, split_items, tc.batch_size,
                             with_losses=False)
        filename = os.path.join(out_dir, "predictions", split + ".jsonl")
        write_predictions(filename, records)
        predictions[split] = filename
    return TrainResult(out_dir, checkpoint, metrics, predictions, rows, best_epoch)


######################################################################
# Few-shot sweeps
def _fewshot_job(job):
    method, model_config, train_config, data_dir, out_dir, labels_dir, split = job
    tc = TrainConfig.from_dict(train_config)
    row = dict(fraction=tc.fraction, method=method, seed=tc.seed,
               spatial_accuracy=None)
    try:
        result = train(ModelConfig.from_dict(model_config), tc, data_dir, out_dir,
                       labels_dir)
    except errors.EmptySubset as err:
        _LOGGER.warning("Skipping %s at fraction %s: %s", method, tc.fraction, err)
        return row
    items = Dataset(data_dir, labels_dir).items(split)
    report = evaluate(items, read_predictions(result.predictions[split]), split=split)
    row["spatial_accuracy"] = report.spatial_accuracy
    _LOGGER.info("%s fraction=%s seed=%d: spatial accuracy %s", method, tc.fraction,
                 tc.seed, report.spatial_accuracy)
    return row


def fewshot_sweep(methods, train_config, data_dir, out_dir, fractions=FEWSHOT_FRACTIONS,
                  seeds=(0, 1, 2), labels_dir=None, split="test_iid", workers=None):
    """Train every method at every fraction and seed; return curve rows.

    `methods` maps method names to :class:`ModelConfig`.  Runs are written to
    ``<out_dir>/<method>/fraction-<f>/seed-<s>`` and fanned out over
    ``workers`` processes (default: ``SWS_THREADS``).  Fractions whose subset
    is empty are skipped with a warning.
    """
    jobs = []
    for method, model_config in methods.items():
        for fraction in fractions:
            for seed in seeds:
                tc = train_config.replace(
                    fraction=fraction, seed=seed, eval_splits=(split,)
                )
                run_dir = os.path.join(
                    out_dir, method, "fraction-{}".format(fraction), "seed-{}".format(seed)
                )
                jobs.append((method, model_config.to_dict(), tc.to_dict(), data_dir,
                             run_dir, labels_dir, split))
    if workers is None:
        workers = worker_count()
    workers = max(1, min(workers, len(jobs)))
    _LOGGER.info("Few-shot sweep: %d runs on %d workers", len(jobs), workers)
    if workers == 1:
        rows = [_fewshot_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(workers) as executor:
            rows = list(executor.map(_fewshot_job, jobs))
    return [r for r in rows if r["spatial_accuracy"] is not None]
