r"""Metrics, the SR/VQA consistency audit and report emission.

Prediction files are JSON-lines with one record per question::

    {"question_id": ..., "answer": ...,
     "sr": {"pair": [subject_id, object_id], "index": [i, j],
            "delta": [dx, dy, dz]}}

where ``sr`` is present for spatial questions only and holds either the
predicted relative position ``delta`` (regression) or predicted classes
``bins`` with their count ``C``.

The audit calls an answered relation word *consistent* if the sign of the
predicted relative position of (subject - object) on the question's axis
agrees with the word: ``left``, ``above`` and ``front`` mean negative.

>>> from sws.scenegen import QAItem
>>> q = QAItem('q0', 's', 'is the a left or right of the b?', 'left', 'left',
...            'o0', 'o1', True, 'rel_x')
>>> audit = consistency_audit([q], {'q0': 'left'},
...                           {'q0': {'delta': [-0.2, 0.0, 0.0]}})
>>> audit.consistency_rate, audit.verdicts
(1.0, {'q0': 'consistent'})
"""
import csv
import dataclasses
import json
import logging
import os
import typing
import warnings

import numpy as np

from . import errors
from . import storage
from .geometry import SUPPORTED_BINS, dequantize, make_bin_spec
from .objects import Record
from .scenegen import AXIS_RELATIONS, RELATION_AXIS

__all__ = [
    "EvalReport",
    "AuditResult",
    "sr_metrics",
    "vqa_accuracy",
    "consistency_audit",
    "evaluate",
    "report_emit",
    "read_reports",
    "write_predictions",
    "read_predictions",
    "FEWSHOT_FIELDS",
]

_LOGGER = logging.getLogger(__name__)

FILTERS = ("all", "spatial", "open", "binary")
BINARY_ANSWERS = ("yes", "no")
FEWSHOT_FIELDS = ("fraction", "method", "spatial_accuracy", "seed")


@dataclasses.dataclass(repr=False)
class EvalReport(Record):
    split: str = ""
    n_questions: int = 0
    vqa_accuracy: typing.Optional[float] = None
    spatial_accuracy: typing.Optional[float] = None
    open_accuracy: typing.Optional[float] = None
    binary_accuracy: typing.Optional[float] = None
    sr_mse: typing.Optional[float] = None
    bin_accuracy: dict = dataclasses.field(default_factory=dict)
    consistency_rate: typing.Optional[float] = None
    inconsistency_rate: typing.Optional[float] = None
    n_audited: int = 0
    n_abstain: int = 0

    def __post_init__(self):
        self.bin_accuracy = {str(k): v for (k, v) in sorted(
            self.bin_accuracy.items(), key=lambda kv: int(kv[0]))}
        rates = [
            self.vqa_accuracy, self.spatial_accuracy, self.open_accuracy,
            self.binary_accuracy, self.consistency_rate, self.inconsistency_rate,
        ] + list(self.bin_accuracy.values())
        for r in rates:
            if r is not None and not 0 <= r <= 1:
                raise errors.DataError("Rate {} outside [0, 1]".format(r))

    def csv_row(self):
        row = self.to_dict()
        bins = row.pop("bin_accuracy")
        for C in SUPPORTED_BINS:
            row["bin_accuracy_{}".format(C)] = bins.get(str(C))
        return row

    @classmethod
    def csv_fields(cls):
        fields = [f.name for f in dataclasses.fields(cls) if f.name != "bin_accuracy"]
        return fields + ["bin_accuracy_{}".format(C) for C in SUPPORTED_BINS]


@dataclasses.dataclass
class AuditResult(object):
    consistency_rate: float
    inconsistency_rate: float
    n_consistent: int
    n_inconsistent: int
    n_abstain: int
    n_gaps: int
    verdicts: dict

    @property
    def n_audited(self):
        return self.n_consistent + self.n_inconsistent


######################################################################
# Metrics
def _default_mask(shape):
    if len(shape) >= 3 and shape[-3] == shape[-2]:
        off = ~np.eye(shape[-2], dtype=bool)
        return np.broadcast_to(off[..., None], shape[-3:])
    return np.ones(shape, dtype=bool)


def sr_metrics(predictions, labels, mode="regression", mask=None):
    """Return ``{"sr_mse": ...}`` or ``{"bin_accuracy": ...}``.

    Pairwise arrays (`(..., N, N, D)`) have their diagonal masked by
    default.

    >>> rpe = np.random.default_rng(0).uniform(-1, 1, (3, 3, 2))
    >>> sr_metrics(rpe, rpe)
    {'sr_mse': 0.0}
    """
    pred = np.asarray(predictions)
    gold = np.asarray(labels)
    if pred.shape != gold.shape:
        raise errors.ShapeError("sr_metrics: shapes differ", pred.shape, gold.shape)
    mask = _default_mask(pred.shape) if mask is None else np.asarray(mask, dtype=bool)
    mask = np.broadcast_to(mask, pred.shape)
    n = int(mask.sum())
    if n == 0:
        raise errors.EmptyEval("No unmasked SR cells")
    if mode == "regression":
        diff = np.where(mask, pred.astype(float) - gold, 0.0)
        return {"sr_mse": float(np.sum(diff * diff) / n)}
    if mode == "bins":
        return {"bin_accuracy": float(np.sum(mask & (pred == gold)) / n)}
    raise errors.ConfigError("Unknown SR mode {!r}".format(mode))


def _keep(q, answer, filter):
    if filter == "all":
        return True
    if filter == "spatial":
        return q.is_spatial
    if filter == "binary":
        return answer in BINARY_ANSWERS
    return answer not in BINARY_ANSWERS


def vqa_accuracy(predicted, gold, items=None, filter="all"):
    """Return the exact-match accuracy over the items passing `filter`.

    `open` and `binary` are decided by the gold answer; `spatial` needs the
    aligned :class:`QAItem` list `items`.

    >>> vqa_accuracy(['left', 'red'], ['left', 'blue'])
    0.5
    """
    if filter not in FILTERS:
        raise errors.ConfigError("filter must be one of {}".format(list(FILTERS)))
    predicted, gold = list(predicted), list(gold)
    if len(predicted) != len(gold) or (items is not None and len(items) != len(gold)):
        raise errors.ShapeError(
            "vqa_accuracy: lists not aligned", (len(predicted),), (len(gold),)
        )
    if filter == "spatial" and items is None:
        raise errors.ContractError("filter='spatial' needs the QA items")
    if items is None:
        items = [None] * len(gold)
    hits = [p == g for (p, g, q) in zip(predicted, gold, items) if _keep(q, g, filter)]
    if not hits:
        raise errors.EmptyEval("No questions pass filter {!r}".format(filter))
    return sum(hits) / len(hits)


def consistency_audit(items, vqa_predictions, sr_predictions, bin_spec=None):
    """Audit spatial answers against predicted relative positions.

    Arguments
    ---------
    items : list
       Gold :class:`QAItem`; only spatial ones are audited.
    vqa_predictions : dict
       `{question_id: answer}`.
    sr_predictions : dict
       `{question_id: sr record}` with ``delta`` or ``bins`` (and ``C``).
    bin_spec : BinSpec
       Its center bin is the abstain band (default: 15 bins).

    Only answers that are relation words of the question's axis are
    audited.  A missing SR record is reported with an :class:`AuditGap`
    warning and the verdict ``"gap"``.
    """
    if bin_spec is None:
        bin_spec = make_bin_spec(1.5, 15)
    specs = {bin_spec.num_classes: bin_spec}
    counts = dict(consistent=0, inconsistent=0, abstain=0, gap=0)
    verdicts = {}
    for q in items:
        if not q.is_spatial:
            continue
        answer = vqa_predictions.get(q.question_id)
        axis = q.axis
        if RELATION_AXIS.get(answer) != axis:
            continue
        sr = sr_predictions.get(q.question_id)
        if not sr:
            warnings.warn(
                "No SR prediction for question {}".format(q.question_id),
                errors.AuditGap,
            )
            verdict = "gap"
        else:
            if "delta" in sr:
                value = float(sr["delta"][axis])
                lo, hi = bin_spec.center_interval()
                neutral = value == 0 or lo <= value <= hi
            else:
                C = int(sr.get("C", bin_spec.num_classes))
                if C not in specs:
                    specs[C] = make_bin_spec(bin_spec.lam, C)
                c = int(sr["bins"][axis])
                value = float(dequantize(c, specs[C]))
                neutral = c == specs[C].center_class or value == 0
            if neutral:
                verdict = "abstain"
            else:
                implied = -1 if answer == AXIS_RELATIONS[axis][0] else 1
                verdict = "consistent" if np.sign(value) == implied else "inconsistent"
        counts[verdict] += 1
        verdicts[q.question_id] = verdict
    n = counts["consistent"] + counts["inconsistent"]
    if n == 0:
        raise errors.EmptyEval("No spatial answers could be audited")
    return AuditResult(
        consistency_rate=counts["consistent"] / n,
        inconsistency_rate=counts["inconsistent"] / n,
        n_consistent=counts["consistent"],
        n_inconsistent=counts["inconsistent"],
        n_abstain=counts["abstain"],
        n_gaps=counts["gap"],
        verdicts=verdicts,
    )


def _or_none(f, *args, **kw):
    try:
        return f(*args, **kw)
    except errors.EmptyEval:
        return None


def evaluate(items, predictions, labels=None, bin_spec=None, split=""):
    """Return the :class:`EvalReport` of `predictions` on gold `items`.

    `labels` maps scene ids to :class:`SRLabels`; when given, SR
    predictions of spatial questions are scored against the label of their
    object pair.
    """
    items = list(items)
    by_id = {p["question_id"]: p for p in predictions}
    answers = [by_id.get(q.question_id, {}).get("answer", "") for q in items]
    gold = [q.answer for q in items]
    report = EvalReport(
        split=split,
        n_questions=len(items),
        vqa_accuracy=_or_none(vqa_accuracy, answers, gold, items),
        spatial_accuracy=_or_none(vqa_accuracy, answers, gold, items, "spatial"),
        open_accuracy=_or_none(vqa_accuracy, answers, gold, items, "open"),
        binary_accuracy=_or_none(vqa_accuracy, answers, gold, items, "binary"),
    )
    sr = {qid: p["sr"] for (qid, p) in by_id.items() if p.get("sr")}
    if labels is not None and sr:
        deltas, gold_deltas = [], []
        bins = {}
        for q in items:
            rec = sr.get(q.question_id)
            if rec is None or q.scene_id not in labels:
                continue
            i, j = rec["index"]
            lab = labels[q.scene_id]
            if "delta" in rec:
                deltas.append(rec["delta"])
                gold_deltas.append(lab.rpe[i, j, : len(rec["delta"])])
            elif int(rec["C"]) in lab.rpe_bins:
                C = int(rec["C"])
                pred, ref = bins.setdefault(C, ([], []))
                pred.append(rec["bins"])
                ref.append(lab.rpe_bins[C][i, j, : len(rec["bins"])])
        if deltas:
            report.sr_mse = sr_metrics(
                np.array(deltas), np.array(gold_deltas), "regression",
                mask=np.ones((len(deltas), 1), dtype=bool),
            )["sr_mse"]
        report.bin_accuracy = {
            str(C): sr_metrics(np.array(p), np.array(r), "bins",
                               mask=np.ones((len(p), 1), dtype=bool))["bin_accuracy"]
            for (C, (p, r)) in sorted(bins.items())
        }
    predicted = dict(zip([q.question_id for q in items], answers))
    audit = _or_none(consistency_audit, items, predicted, sr, bin_spec)
    if audit is not None:
        report.consistency_rate = audit.consistency_rate
        report.inconsistency_rate = audit.inconsistency_rate
        report.n_audited = audit.n_audited
        report.n_abstain = audit.n_abstain
    return report


######################################################################
# Files
def write_predictions(filename, records):
    storage.write_jsonl(filename, records)


def read_predictions(filename):
    if not os.path.exists(filename):
        raise errors.DataError("No such file: {}".format(filename))
    records = storage.read_jsonl(filename)
    for r in records:
        if "question_id" not in r or "answer" not in r:
            raise errors.DataError("{}: prediction without question_id/answer".format(
                filename))
    return records


def read_reports(filenames):
    """Return the :class:`EvalReport` objects stored in JSON report files."""
    reports = []
    for filename in filenames:
        if not os.path.exists(filename):
            raise errors.DataError("No such file: {}".format(filename))
        with open(filename) as f:
            data = json.load(f)
        for d in data if isinstance(data, list) else [data]:
            reports.append(EvalReport.from_dict(d))
    return reports


def report_emit(reports, format="json", filename=None, fewshot=None,
                fewshot_filename=None):
    """Write `reports` as JSON or CSV and few-shot curve rows as CSV.

    Returns the list of written files.  Few-shot rows are dicts with the
    keys of :data:`FEWSHOT_FIELDS` and are written sorted by fraction,
    method and seed.
    """
    if format not in ("json", "csv"):
        raise errors.ConfigError("Unknown report format {!r}".format(format))
    reports = list(reports)
    if not reports and not fewshot:
        raise errors.NoData("Nothing to report")
    if filename is None and (reports or fewshot_filename is None):
        raise errors.ConfigError("report_emit needs an output filename")
    written = []
    if reports:
        storage.ensure_dir(filename)
        with open(filename, "w", newline="") as f:
            if format == "json":
                json.dump([r.to_dict() for r in reports], f, indent=2)
                f.write("\n")
            else:
                writer = csv.DictWriter(f, fieldnames=EvalReport.csv_fields())
                writer.writeheader()
                for r in reports:
                    writer.writerow(r.csv_row())
        written.append(filename)
    if fewshot:
        if fewshot_filename is None:
            fewshot_filename = os.path.join(
                os.path.dirname(os.path.abspath(filename)), "fewshot.csv"
            )
        storage.ensure_dir(fewshot_filename)
        rows = sorted(
            fewshot, key=lambda r: (float(r["fraction"]), r["method"], int(r["seed"]))
        )
        with open(fewshot_filename, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=FEWSHOT_FIELDS)
            writer.writeheader()
            for r in rows:
                writer.writerow({k: r[k] for k in FEWSHOT_FIELDS})
        written.append(fewshot_filename)
    for name in written:
        _LOGGER.info("Wrote %s", name)
    return written
