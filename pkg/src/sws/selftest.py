"""Property suites run by ``sws selftest``.

Each check returns :class:`CheckResult` objects; :func:`run_selftest` runs
them all and logs a line per check.
"""
import dataclasses
import filecmp
import glob
import logging
import os
import tempfile

import numpy as np

from . import errors
from . import nnkit
from .dataset import generate_dataset, write_dataset_labels
from .geometry import SUPPORTED_BINS, dequantize, make_bin_spec, quantize
from .labels import check_labels, read_labels
from .model import Batch, ModelConfig, SpatialVQAModel
from .nnkit import Tensor
from .patches import PyramidConfig
from .scenegen import SceneSpec
from .train import TrainConfig, sr_loss, total_loss, train, vqa_loss

__all__ = [
    "CheckResult",
    "check_binning",
    "check_labels_files",
    "check_gradients",
    "check_label_determinism",
    "check_training_determinism",
    "run_selftest",
]

_LOGGER = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4

# Finite-difference step and the gradient magnitude below which errors are
# absolute rather than relative.
GRAD_EPSILON = 1e-5
GRAD_FLOOR = 1e-4


@dataclasses.dataclass
class CheckResult(object):
    name: str
    passed: bool
    detail: str = ""


######################################################################
# Binning
def _binning_failures(spec, points):
    C = spec.num_classes
    edges = np.asarray(spec.edges)
    widths = np.asarray(spec.widths)
    failures = []
    if edges[0] != -1.0 or edges[-1] != 1.0:
        failures.append("edges span [{}, {}]".format(edges[0], edges[-1]))
    if C > 3:
        distance = np.abs(np.arange(C) - C / 2.0)
        order = np.argsort(distance, kind="stable")
        if np.any(np.diff(widths[order]) < -1e-15):
            failures.append("widths not monotone in |c - C/2|")
    classes = np.arange(C)
    if not np.array_equal(quantize(dequantize(classes, spec), spec), classes):
        failures.append("quantize(dequantize(c)) != c")
    grid = np.linspace(-1.0, 1.0, points)
    c = quantize(grid, spec)
    outside = c != spec.center_class
    if np.any(np.sign(dequantize(c[outside], spec)) != np.sign(grid[outside])):
        failures.append("sign lost outside the center bin")
    if C == 3:
        got = [int(quantize(v, spec)) for v in (-1.0, -0.5, 0.0, 0.5, 1.0)]
        if got != [0, 0, 1, 2, 2]:
            failures.append("three-class intervals give {}".format(got))
    return failures


def check_binning(bins=SUPPORTED_BINS, lam=1.5, points=100001):
    """Bin edges, monotone widths, round trips and sign fidelity."""
    results = []
    for C in bins:
        failures = _binning_failures(make_bin_spec(lam, C), points)
        results.append(CheckResult("binning C={}".format(C), not failures,
                                   "; ".join(failures)))
    return results


def check_labels_files(paths):
    """Antisymmetry, zero diagonal and bin agreement of label files."""
    paths = list(paths)
    if not paths:
        raise errors.NoData("No label files to check")
    bad = []
    for filename in paths:
        try:
            check_labels(read_labels(filename))
        except errors.CorruptLabels as err:
            bad.append(str(err))
    return [CheckResult("labels antisymmetry ({} files)".format(len(paths)), not bad,
                        "; ".join(bad[:3]))]


######################################################################
# Gradients
def _weights(rng, shape):
    return Tensor(rng.normal(size=shape))


def _layer_cases(rng):
    """Yield `(name, f, params)` for every layer type."""
    x = Tensor(rng.normal(size=(2, 4, 8)))
    mask = np.array([[True, True, True, False], [True, True, True, True]])
    R = _weights(rng, (2, 4, 8))

    def project(module, *args):
        return lambda: nnkit.sum(nnkit.mul(module(*args), R))

    lin = nnkit.Linear(8, 8, rng)
    yield "Linear", project(lin, x), lin.parameters()
    norm = nnkit.LayerNorm(8)
    norm.gamma.data[...] = rng.uniform(0.5, 1.5, size=8)
    yield "LayerNorm", project(norm, x), norm.parameters()
    ff = nnkit.FeedForward(8, 16, 8, rng)
    yield "FeedForward", project(ff, x), ff.parameters()
    attn = nnkit.MultiHeadSelfAttention(8, 2, rng)
    yield "MultiHeadSelfAttention", project(attn, x, mask), attn.parameters()
    layer = nnkit.TransformerEncoderLayer(8, 2, rng, dropout=0.2)
    layer.drop.frozen = True
    yield "TransformerEncoderLayer", project(layer, x, mask), layer.parameters()
    emb = nnkit.Embedding(10, 8, rng)
    ids = rng.integers(0, 10, size=(2, 4))
    yield "Embedding", project(emb, ids), emb.parameters()


def tiny_model_config(**kw):
    """A configuration small enough for finite differences."""
    args = dict(
        hidden=8, heads=2, lang_layers=1, vis_layers=1, cross_layers=1,
        fusion_layers=1, max_objects=3, max_tokens=12, sr_task="rpe",
        sr_mode="bins", num_bins=7, relpos_input="early", use_patches=True,
        pyramid=PyramidConfig(scales=(1,), overlap=0.0, patch_side=2),
    )
    args.update(kw)
    return ModelConfig(**args)


def random_batch(config, rng, B=2):
    """A batch of random inputs and valid targets for `config`."""
    N, L, D = config.max_objects, config.max_tokens, config.dims
    tokens = rng.integers(2, config.vocab_size, size=(B, L))
    tokens[:, L - 2:] = 0
    obj_mask = np.ones((B, N), dtype=bool)
    obj_mask[0, -1] = False
    oce = rng.uniform(0, 1, size=(B, N, D))
    rpe = oce[:, :, None, :] - oce[:, None, :, :]
    spec = make_bin_spec(1.5, config.num_bins)
    return Batch(
        tokens=tokens,
        token_mask=tokens != 0,
        obj_feats=rng.uniform(0, 1, size=(B, N, config.object_features)),
        obj_mask=obj_mask,
        answers=rng.integers(0, config.num_answers, size=B),
        patches=rng.uniform(0, 1, size=(B, config.num_patches, config.patch_features)),
        relpos=rpe[:, :, 0, :] if not config.relpos_pairwise else rpe.reshape(B, N, -1),
        oce=oce,
        rpe=rpe,
        oce_bins=quantize(2 * oce - 1, spec),
        rpe_bins=quantize(rpe, spec),
    )


def model_loss(model, batch):
    c = model.config
    out = model(batch)
    l_sr = None if c.sr_task == "none" else sr_loss(out, batch, c.sr_task, c.sr_mode)
    return total_loss(vqa_loss(out, batch), l_sr, c.alpha, c.beta)


def check_gradients(seeds=(0, 1, 2), fraction=0.05):
    """Finite-difference checks of every layer and the full model loss."""
    results = []
    with nnkit.precision(np.float64):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            cases = list(_layer_cases(rng))
            for mode in ("bins", "regression"):
                model = SpatialVQAModel(tiny_model_config(sr_mode=mode), seed=seed)
                batch = random_batch(model.config, rng)
                cases.append(("model ({})".format(mode),
                              lambda m=model, b=batch: model_loss(m, b),
                              model.parameters()))
            for name, f, params in cases:
                err = nnkit.grad_check(f, params, epsilon=GRAD_EPSILON,
                                       fraction=fraction, seed=seed,
                                       floor=GRAD_FLOOR)
                results.append(CheckResult(
                    "grad {} seed={}".format(name, seed), err < GRAD_TOLERANCE,
                    "max relative error {:.2e}".format(err),
                ))
    return results


######################################################################
# Determinism
def _tiny_dataset(directory, seed=0, num_scenes=12):
    generate_dataset(directory, num_scenes, seed=seed, questions_per_scene=4,
                     spec=SceneSpec(n_objects=3), workers=1)
    write_dataset_labels(directory, bins=(3, 7))
    return directory


def _same_files(a, b, pattern):
    names = sorted(os.path.relpath(p, a) for p in glob.glob(os.path.join(a, pattern)))
    other = sorted(os.path.relpath(p, b) for p in glob.glob(os.path.join(b, pattern)))
    if not names or names != other:
        return False
    match, mismatch, errs = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errs


def check_label_determinism(workdir):
    """Generating data and labels twice gives byte-identical files."""
    a = _tiny_dataset(os.path.join(workdir, "labels-a"))
    b = _tiny_dataset(os.path.join(workdir, "labels-b"))
    same = _same_files(a, b, os.path.join("labels", "*.srlb")) and _same_files(
        a, b, "questions.jsonl"
    )
    results = [CheckResult("label determinism", same)]
    results.extend(check_labels_files(glob.glob(os.path.join(a, "labels", "*.srlb"))))
    return results


def check_training_determinism(workdir):
    """Two training runs with one seed log identical metrics."""
    data = _tiny_dataset(os.path.join(workdir, "train-data"))
    config = tiny_model_config(max_objects=3, use_patches=False, num_bins=7)
    tc = TrainConfig(epochs=2, batch_size=8, seed=3, eval_splits=("test_iid",))
    runs = [os.path.join(workdir, "run-{}".format(n)) for n in (0, 1)]
    for run in runs:
        train(config, tc, data, run)
    return [CheckResult(
        "training determinism", _same_files(runs[0], runs[1], "metrics.csv")
    )]


def run_selftest(workdir=None, quick=False):
    """Run every check; returns the list of :class:`CheckResult`.

    With `quick` the binning grid is coarser and gradients use one seed.
    """
    results = check_binning(points=1001 if quick else 100001)
    results += check_gradients(seeds=(0,) if quick else (0, 1, 2))
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        results += check_label_determinism(tmp)
        results += check_training_determinism(tmp)
    for r in results:
        log = _LOGGER.info if r.passed else _LOGGER.error
        log("%s %s %s", "PASS" if r.passed else "FAIL", r.name, r.detail)
    return results
