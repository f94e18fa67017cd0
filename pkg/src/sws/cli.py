"""Command line entry point ``sws``.

Every subcommand writes ``<command>.manifest.json`` next to its outputs,
recording the resolved configuration, seeds, input content hashes and the
package version.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical error.

Values are resolved with the precedence command line flag, then config
file, then built-in default.
"""
import argparse
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys
import typing

from . import __version__
from . import errors
from . import storage
from .dataset import generate_dataset, write_dataset_labels
from .evalkit import (
    consistency_audit,
    evaluate,
    read_predictions,
    read_reports,
    report_emit,
)
from .geometry import SUPPORTED_BINS, make_bin_spec
from .labels import read_labels
from .model import ModelConfig
from .objects import Record
from .scenegen import QAItem, SceneSpec
from .train import FEWSHOT_FRACTIONS, PAPER_LR, TrainConfig, fewshot_sweep, train

__all__ = ["RunManifest", "main", "dispatch", "build_parser", "content_hash"]

_LOGGER = logging.getLogger(__name__)

COMMANDS = ("gen", "labels", "train", "eval", "audit", "fewshot", "report", "selftest")


@dataclasses.dataclass(repr=False)
class RunManifest(Record):
    command: str = ""
    config: dict = dataclasses.field(default_factory=dict)
    seeds: list = dataclasses.field(default_factory=list)
    inputs: dict = dataclasses.field(default_factory=dict)
    outputs: list = dataclasses.field(default_factory=list)
    version: str = __version__
    created: str = ""

    def write(self, directory):
        filename = os.path.join(directory, "{}.manifest.json".format(self.command))
        storage.ensure_dir(filename)
        if not self.created:
            self.created = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self.save(filename)
        return filename


def content_hash(path):
    """Return the SHA-256 of a file, or of the sorted files of a directory."""
    if not os.path.exists(path):
        raise errors.DataError("No such file or directory: {}".format(path))
    digest = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                filename = os.path.join(root, name)
                digest.update(os.path.relpath(filename, path).encode())
                digest.update(content_hash(filename).encode())
        return digest.hexdigest()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


######################################################################
# Argument parsing
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise errors.UsageError("{}\n{}".format(message, self.format_usage().strip()))


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers: " + text)


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated integers: " + text)


def build_parser():
    parser = _Parser(prog="sws", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate scenes, questions and splits")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="SceneSpec JSON")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--questions-per-scene", type=int, default=5)
    p.add_argument("--objects", type=int)
    p.add_argument("--ood-shift", type=float, default=0.5)
    p.add_argument("--non-spatial-ratio", type=float, default=0.3)
    p.add_argument("--prior-strength", type=float, default=0.7)

    p = sub.add_parser("labels", help="build weak-supervision label files")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="label directory (default: DATA/labels)")
    p.add_argument("--dims", type=int, default=3, choices=(2, 3))
    p.add_argument("--bins", type=_ints, default=SUPPORTED_BINS)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--model-config")
    p.add_argument("--train-config")
    p.add_argument("--preset", choices=list(ModelConfig.ablations()))
    p.add_argument("--paper-scale", action="store_true",
                   help="start from the full-size model and protocol")
    p.add_argument("--sr-task")
    p.add_argument("--sr-mode")
    p.add_argument("--num-bins", type=int)
    p.add_argument("--relpos")
    p.add_argument("--patches", action="store_true", default=None)
    _train_flags(p)
    p.add_argument("--cache")

    p = sub.add_parser("eval", help="score a prediction file")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--labels", help="label directory")
    p.add_argument("--report", required=True)
    p.add_argument("--format", default="json")
    p.add_argument("--split", default="")
    p.add_argument("--bins", type=int, default=15)

    p = sub.add_parser("audit", help="SR/VQA consistency audit")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--out", help="verdict file (default: next to --pred)")

    p = sub.add_parser("fewshot", help="few-shot sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--fractions", type=_floats, default=FEWSHOT_FRACTIONS)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--methods", default="baseline,full",
                   help="comma separated preset names")
    p.add_argument("--model-config", help="JSON applied on top of every preset")
    p.add_argument("--train-config")
    p.add_argument("--split", default="test_iid")
    p.add_argument("--workers", type=int)
    _train_flags(p)

    p = sub.add_parser("report", help="merge JSON reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv")

    p = sub.add_parser("selftest", help="run the property suites")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--workdir")
    p.add_argument("--out", help="directory for the manifest")
    return parser


def _train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--paper-lr", action="store_true",
                   help="use the learning rate {}".format(PAPER_LR))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)


######################################################################
# Configuration
def _load_json(filename):
    if filename is None:
        return {}
    if not os.path.exists(filename):
        raise errors.DataError("No such file: {}".format(filename))
    with open(filename) as f:
        try:
            data = json.load(f)
        except ValueError as err:
            raise errors.ConfigError("{}: {}".format(filename, err))
    if not isinstance(data, dict):
        raise errors.ConfigError("{}: expected a JSON object".format(filename))
    return data


def _override(d, **flags):
    d = dict(d)
    d.update({k: v for (k, v) in flags.items() if v is not None})
    return d


def _model_config(args, preset=None):
    base = {}
    if getattr(args, "paper_scale", False):
        base = {k: v for (k, v) in ModelConfig.paper().to_dict().items()
                if k not in ("alpha", "beta")}
    if preset:
        default = ModelConfig().to_dict()
        switches = ModelConfig.ablations()[preset].to_dict()
        base.update({
            k: v for (k, v) in switches.items()
            if v != default[k] and k not in ("alpha", "beta")
        })
    base.update(_load_json(args.model_config))
    return ModelConfig.from_dict(_override(
        base,
        sr_task=getattr(args, "sr_task", None),
        sr_mode=getattr(args, "sr_mode", None),
        num_bins=getattr(args, "num_bins", None),
        relpos_input=getattr(args, "relpos", None),
        use_patches=getattr(args, "patches", None),
    ))


def _train_config(args):
    base = TrainConfig.paper().to_dict() if getattr(args, "paper_scale", False) else {}
    base.update(_load_json(args.train_config))
    return TrainConfig.from_dict(_override(
        base,
        lr=PAPER_LR if args.paper_lr else args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        fraction=args.fraction,
        alpha=args.alpha,
        beta=args.beta,
    ))


def _read_gold(filename, question_ids=None):
    if not os.path.exists(filename):
        raise errors.DataError("No such file: {}".format(filename))
    items = [QAItem.from_dict(d) for d in storage.read_jsonl(filename)]
    if question_ids is not None:
        items = [q for q in items if q.question_id in question_ids]
    if not items:
        raise errors.NoData("No gold questions match {}".format(filename))
    return items


######################################################################
# Commands
def cmd_gen(args):
    spec = _load_json(args.config)
    if args.objects is not None:
        spec["n_objects"] = args.objects
    spec = SceneSpec.from_dict(spec)
    outputs = generate_dataset(
        args.out, args.scenes, seed=args.seed,
        questions_per_scene=args.questions_per_scene, spec=spec,
        ood_shift=args.ood_shift, non_spatial_ratio=args.non_spatial_ratio,
        prior_strength=args.prior_strength,
    )
    config = dict(scene_spec=spec.to_dict(), scenes=args.scenes,
                  questions_per_scene=args.questions_per_scene,
                  ood_shift=args.ood_shift, non_spatial_ratio=args.non_spatial_ratio,
                  prior_strength=args.prior_strength)
    return RunManifest("gen", config, [args.seed], {}, outputs), args.out


def cmd_labels(args):
    inputs = {args.data: content_hash(args.data)}
    outputs = write_dataset_labels(args.data, D=args.dims, bins=args.bins,
                                   labels_dir=args.out)
    out = os.path.dirname(outputs[-1])
    config = dict(dims=args.dims, bins=list(args.bins))
    return RunManifest("labels", config, [], inputs, outputs), out


def cmd_train(args):
    model_config = _model_config(args, args.preset)
    train_config = _train_config(args)
    inputs = {args.data: content_hash(args.data)}
    result = train(model_config, train_config, args.data, args.out,
                   labels_dir=args.labels, cache_dir=args.cache)
    outputs = [result.checkpoint, result.metrics] + sorted(result.predictions.values())
    config = dict(model=train_config.resolve(model_config).to_dict(),
                  train=train_config.to_dict())
    print("best epoch {}: {}".format(result.best_epoch, result.checkpoint))
    return RunManifest("train", config, [train_config.seed], inputs, outputs), args.out


def _load_labels(directory, items):
    if directory is None:
        return None
    if not os.path.isdir(directory):
        raise errors.DataError("No such directory: {}".format(directory))
    labels = {}
    for scene_id in sorted(set(q.scene_id for q in items)):
        filename = os.path.join(directory, scene_id + ".srlb")
        if os.path.exists(filename):
            labels[scene_id] = read_labels(filename)
    return labels


def cmd_eval(args):
    predictions = read_predictions(args.pred)
    items = _read_gold(args.gold, set(p["question_id"] for p in predictions))
    labels = _load_labels(args.labels, items)
    report = evaluate(items, predictions, labels, make_bin_spec(1.5, args.bins),
                      split=args.split)
    outputs = report_emit([report], args.format, args.report)
    inputs = {p: content_hash(p) for p in (args.pred, args.gold)}
    print(report.to_json())
    config = dict(format=args.format, split=args.split, bins=args.bins)
    return (RunManifest("eval", config, [], inputs, outputs),
            os.path.dirname(os.path.abspath(args.report)))


def cmd_audit(args):
    predictions = read_predictions(args.pred)
    items = _read_gold(args.gold, set(p["question_id"] for p in predictions))
    audit = consistency_audit(
        items,
        {p["question_id"]: p["answer"] for p in predictions},
        {p["question_id"]: p["sr"] for p in predictions if p.get("sr")},
        make_bin_spec(1.5, args.bins),
    )
    out = args.out or os.path.splitext(args.pred)[0] + ".audit.json"
    summary = dict(
        consistency_rate=audit.consistency_rate,
        inconsistency_rate=audit.inconsistency_rate,
        n_consistent=audit.n_consistent,
        n_inconsistent=audit.n_inconsistent,
        n_abstain=audit.n_abstain,
        n_gaps=audit.n_gaps,
    )
    storage.ensure_dir(out)
    with open(out, "w") as f:
        json.dump(dict(summary, verdicts=audit.verdicts), f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(summary, sort_keys=True))
    inputs = {p: content_hash(p) for p in (args.pred, args.gold)}
    return (RunManifest("audit", dict(bins=args.bins), [], inputs, [out]),
            os.path.dirname(os.path.abspath(out)))


def cmd_fewshot(args):
    presets = ModelConfig.ablations()
    methods = {}
    for name in [m for m in args.methods.split(",") if m]:
        if name not in presets:
            raise errors.UsageError(
                "Unknown method {!r}; choose from {}".format(name, list(presets))
            )
        methods[name] = _model_config(args, name)
    train_config = _train_config(args)
    seeds = list(range(args.seeds))
    rows = fewshot_sweep(
        methods, train_config, args.data, args.out, fractions=args.fractions,
        seeds=seeds, labels_dir=args.labels, split=args.split, workers=args.workers,
    )
    outputs = report_emit([], fewshot=rows,
                          fewshot_filename=os.path.join(args.out, "fewshot.csv"))
    config = dict(methods={k: v.to_dict() for (k, v) in methods.items()},
                  train=train_config.to_dict(), fractions=list(args.fractions),
                  split=args.split)
    inputs = {args.data: content_hash(args.data)}
    return RunManifest("fewshot", config, seeds, inputs, outputs), args.out


def cmd_report(args):
    reports = read_reports(args.reports)
    outputs = report_emit(reports, args.format, args.out)
    inputs = {p: content_hash(p) for p in args.reports}
    return (RunManifest("report", dict(format=args.format), [], inputs, outputs),
            os.path.dirname(os.path.abspath(args.out)))


def cmd_selftest(args):
    from .selftest import run_selftest

    results = run_selftest(workdir=args.workdir, quick=args.quick)
    failed = [r for r in results if not r.passed]
    for r in results:
        print("{} {} {}".format("PASS" if r.passed else "FAIL", r.name, r.detail).strip())
    if failed:
        raise errors.NumericalError("{} of {} checks failed".format(
            len(failed), len(results)))
    manifest = RunManifest("selftest", dict(quick=args.quick), [0, 1, 2], {}, [])
    return manifest, args.out


_COMMANDS = dict(
    gen=cmd_gen,
    labels=cmd_labels,
    train=cmd_train,
    eval=cmd_eval,
    audit=cmd_audit,
    fewshot=cmd_fewshot,
    report=cmd_report,
    selftest=cmd_selftest,
)


def dispatch(argv=None):
    """Run the command in `argv` and return the exit code.

    Errors are reported on stderr; they are not raised.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise errors.UsageError(
                "missing command, one of {}\n{}".format(
                    ", ".join(COMMANDS), parser.format_usage().strip()
                )
            )
        level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        manifest, directory = _COMMANDS[args.command](args)
        if directory is not None:
            _LOGGER.info("Wrote %s", manifest.write(directory))
    except errors.SWSError as err:
        print("sws: error: {}".format(err), file=sys.stderr)
        return err.exit_code
    except SystemExit as err:  # --help and --version
        return err.code or 0
    return 0


def main(argv: typing.Optional[list] = None):
    sys.exit(dispatch(argv))

