r"""Dataset directories and batch assembly.

A generated dataset directory holds::

    dataset.json          header: vocabularies, generator spec, seeds
    scenes/<id>.json      one scene document per scene
    depth/<id>.dpth       raw depth maps
    questions.jsonl       one QAItem per line
    splits.json           {split: [question_id, ...]}
    labels/<id>.srlb      weak-supervision labels (written by ``sws labels``)
    labels/depth_max.json dataset depth normalizer

Model inputs for a split are assembled once into a dict of arrays (per-scene
features and labels plus per-question tokens) that may be cached with an
:class:`sws.storage.ArrayStore`.

>>> ids, mask = QUESTION_VOCAB.encode(
...     "Is the red cube left or right of the blue sphere?", 12)
>>> int(mask.sum()), int(ids[-1])
(11, 0)
"""
import hashlib
import json
import logging
import os
import warnings

import numpy as np

from . import errors
from . import storage
from .geometry import SUPPORTED_BINS, make_bin_spec, quantize
from .labels import (
    DEFAULT_MAX_OBJECTS,
    FileDepthSource,
    dataset_depth_max,
    read_labels,
    scene_labels,
    write_labels,
)
from .model import Batch
from .objects import canonical_json
from .patches import extract_pyramid, flatten_patches
from .scenegen import (
    ANSWERS,
    COLORS,
    RELATION_AXIS,
    SHAPES,
    WORDS,
    QAItem,
    Scene,
    SceneSpec,
    generate_questions,
    generate_scenes,
    make_splits,
    normalized_bbox,
    render_depth,
    render_image,
)

__all__ = [
    "PAD",
    "UNK",
    "Vocabulary",
    "QUESTION_VOCAB",
    "ANSWER_INDEX",
    "Dataset",
    "write_dataset",
    "generate_dataset",
    "write_dataset_labels",
    "object_features",
    "relpos_rows",
    "assemble",
    "make_batch",
    "iter_batches",
    "DATASET_VERSION",
]

_LOGGER = logging.getLogger(__name__)

DATASET_VERSION = 1
PAD, UNK = 0, 1
SPLIT_NAMES = ("train", "dev", "test_iid", "test_ood")


class Vocabulary(object):
    """Closed word list; id 0 pads and id 1 stands for unknown words."""

    def __init__(self, words):
        self.words = ["<pad>", "<unk>"] + list(words)
        self.index = {w: n for (n, w) in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    @staticmethod
    def tokenize(text):
        return text.lower().replace("?", " ").replace(",", " ").split()

    def encode(self, text, length):
        """Return `(ids, mask)` of `text` padded to `length`."""
        words = self.tokenize(text)
        if len(words) > length:
            raise errors.ShapeError(
                "Question has {} tokens, at most {} allowed: {!r}".format(
                    len(words), length, text
                )
            )
        ids = np.full(length, PAD, dtype=np.int32)
        ids[: len(words)] = [self.index.get(w, UNK) for w in words]
        return ids, ids != PAD


QUESTION_VOCAB = Vocabulary(WORDS)
ANSWER_INDEX = {a: n for (n, a) in enumerate(ANSWERS)}


######################################################################
# Directory layout
def _require(path):
    if not os.path.exists(path):
        raise errors.DataError("No such file or directory: {}".format(path))
    return path


def write_dataset(directory, scenes, questions, splits, header):
    """Write a dataset directory; returns the list of written files."""
    written = []
    header = dict(
        header,
        version=DATASET_VERSION,
        answers=list(ANSWERS),
        words=list(QUESTION_VOCAB.words),
        num_scenes=len(scenes),
        num_questions=len(questions),
    )
    os.makedirs(directory, exist_ok=True)
    for scene in scenes:
        filename = os.path.join(directory, "scenes", scene.scene_id + ".json")
        storage.ensure_dir(filename)
        scene.save(filename)
        written.append(filename)
        filename = os.path.join(directory, "depth", scene.scene_id + ".dpth")
        storage.write_depth(filename, render_depth(scene))
        written.append(filename)
    filename = os.path.join(directory, "questions.jsonl")
    storage.write_jsonl(filename, [q.to_dict() for q in questions])
    written.append(filename)
    for name, data in [
        ("splits.json", {k: [q.question_id for q in v] for (k, v) in splits.items()}),
        ("dataset.json", header),
    ]:
        filename = os.path.join(directory, name)
        with open(filename, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
        written.append(filename)
    _LOGGER.info("Wrote %d scenes, %d questions to %s", len(scenes), len(questions),
                 directory)
    return written


class Dataset(object):
    """Read access to a dataset directory."""

    def __init__(self, directory, labels_dir=None):
        if not os.path.isdir(directory):
            raise errors.DataError("No such directory: {}".format(directory))
        self.directory = directory
        self.labels_dir = labels_dir or os.path.join(directory, "labels")
        with open(_require(os.path.join(directory, "dataset.json"))) as f:
            self.header = json.load(f)
        if self.header.get("version") != DATASET_VERSION:
            raise errors.UnsupportedVersion(
                "Dataset version {} not supported".format(self.header.get("version"))
            )
        if list(self.header.get("answers", [])) != list(ANSWERS):
            raise errors.DataError("Dataset answer vocabulary differs from this build")
        self.questions = [
            QAItem.from_dict(d)
            for d in storage.read_jsonl(_require(os.path.join(directory, "questions.jsonl")))
        ]
        with open(_require(os.path.join(directory, "splits.json"))) as f:
            self.splits = json.load(f)
        self._by_id = {q.question_id: q for q in self.questions}
        self._scenes = {}

    def scene_ids(self):
        return sorted(set(q.scene_id for q in self.questions))

    def scene(self, scene_id):
        if scene_id not in self._scenes:
            filename = _require(os.path.join(self.directory, "scenes", scene_id + ".json"))
            self._scenes[scene_id] = Scene.load(filename)
        return self._scenes[scene_id]

    def label_path(self, scene_id):
        return os.path.join(self.labels_dir, scene_id + ".srlb")

    def has_labels(self):
        return os.path.isdir(self.labels_dir) and all(
            os.path.exists(self.label_path(s)) for s in self.scene_ids()
        )

    def labels(self, scene_id):
        return read_labels(_require(self.label_path(scene_id)))

    def items(self, split):
        if split not in self.splits:
            raise errors.DataError(
                "Unknown split {!r}; have {}".format(split, sorted(self.splits))
            )
        return [self._by_id[qid] for qid in self.splits[split]]


def generate_dataset(directory, num_scenes, seed=0, questions_per_scene=5, spec=None,
                     ood_shift=0.5, non_spatial_ratio=0.3, prior_strength=0.7,
                     workers=None):
    """Generate scenes, questions and splits into `directory`.

    Scene `n` uses the seed `seed * 100000 + n`; the output does not depend
    on `workers`.
    """
    if num_scenes < 1:
        raise errors.InvalidSpec("num_scenes must be >= 1, got {}".format(num_scenes))
    spec = spec or SceneSpec()
    spec.validate()
    seeds = [seed * 100000 + n for n in range(num_scenes)]
    scenes = generate_scenes(seeds, spec, workers)
    questions = []
    for s, scene in zip(seeds, scenes):
        questions.extend(
            generate_questions(scene, s, questions_per_scene,
                               non_spatial_ratio=non_spatial_ratio,
                               prior_strength=prior_strength)
        )
    splits = make_splits(questions, seed, ood_shift)
    header = dict(
        seed=seed,
        num_scenes_requested=num_scenes,
        questions_per_scene=questions_per_scene,
        ood_shift=ood_shift,
        non_spatial_ratio=non_spatial_ratio,
        prior_strength=prior_strength,
        scene_spec=spec.to_dict(),
    )
    return write_dataset(directory, scenes, questions, splits, header)


def write_dataset_labels(directory, D=3, bins=SUPPORTED_BINS, labels_dir=None,
                         max_objects=DEFAULT_MAX_OBJECTS):
    """Build the label file of every scene of the dataset in `directory`.

    Depth maps are normalized by the largest depth of the whole dataset,
    which is recorded in ``depth_max.json``.  Returns the written files.
    """
    dataset = Dataset(directory, labels_dir)
    source = FileDepthSource(_require(os.path.join(directory, "depth")))
    depth_max = dataset_depth_max(source.paths())
    os.makedirs(dataset.labels_dir, exist_ok=True)
    written = []
    for scene_id in dataset.scene_ids():
        labels = scene_labels(dataset.scene(scene_id), source, depth_max, D=D,
                              bins=bins, max_objects=max_objects)
        filename = dataset.label_path(scene_id)
        write_labels(labels, filename)
        written.append(filename)
    filename = os.path.join(dataset.labels_dir, "depth_max.json")
    with open(filename, "w") as f:
        json.dump(dict(depth_max=depth_max, D=D, bins=list(bins)), f, indent=2,
                  sort_keys=True)
        f.write("\n")
    written.append(filename)
    _LOGGER.info("Wrote %d label files to %s", len(written) - 1, dataset.labels_dir)
    return written


######################################################################
# Features
def object_features(scene, max_objects):
    """Return `(features, mask)`: one-hot shape and color plus the
    normalized box of each object, zero-padded to `max_objects` rows."""
    objects = scene.objects
    if len(objects) > max_objects:
        warnings.warn(
            "Scene {}: keeping {} of {} objects".format(
                scene.scene_id, max_objects, len(objects)
            )
        )
        objects = objects[:max_objects]
    F = len(SHAPES) + len(COLORS) + 4
    feats = np.zeros((max_objects, F), dtype=np.float32)
    colors = list(COLORS)
    for n, obj in enumerate(objects):
        feats[n, SHAPES.index(obj.shape)] = 1
        feats[n, len(SHAPES) + colors.index(obj.color)] = 1
        feats[n, -4:] = normalized_bbox(obj, scene.camera).as_array()
    mask = np.zeros(max_objects, dtype=bool)
    mask[: len(objects)] = True
    return feats, mask


def relpos_rows(rpe, pairwise=False):
    """Return relative-position input rows from an `(N, N, D)` tensor.

    Row `k` is the position of object `k` relative to object 0, or with
    `pairwise` all of its relative positions flattened.
    """
    rpe = np.asarray(rpe)
    N = rpe.shape[0]
    if pairwise:
        return rpe.reshape(N, -1)
    return rpe[:, 0, :]


def _pad(a, shape, dtype):
    out = np.zeros(shape, dtype=dtype)
    out[tuple(slice(0, n) for n in a.shape)] = a
    return out


def _config_key(config, split, items, with_labels):
    key = dict(
        split=split,
        max_objects=config.max_objects,
        max_tokens=config.max_tokens,
        dims=config.dims,
        num_bins=config.num_bins if config.sr_mode == "bins" else None,
        relpos_pairwise=config.relpos_pairwise,
        use_patches=config.use_patches,
        pyramid=config.pyramid.to_dict(),
        labels=with_labels,
        items=hashlib.sha256(
            "\n".join(q.question_id for q in items).encode()
        ).hexdigest(),
    )
    return hashlib.sha256(canonical_json(key).encode()).hexdigest()[:16]


def assemble(dataset, items, config, split="", with_labels=None, cache_dir=None,
             data_format="npz"):
    """Return the arrays needed to batch `items` for a model `config`.

    Per-scene arrays (``obj_feats``, ``obj_mask``, ``patches``, ``oce``,
    ``rpe``, ``oce_bins``, ``rpe_bins``, ``relpos``) are indexed by the
    per-question ``scene_index``.
    """
    items = list(items)
    if not items:
        raise errors.NoData("No questions to assemble for split {!r}".format(split))
    if with_labels is None:
        with_labels = config.sr_task != "none" or config.relpos_input != "none"
    store = None
    if cache_dir is not None:
        name = "{}-{}".format(split or "items", _config_key(config, split, items, with_labels))
        store = storage.ArrayStore(os.path.join(cache_dir, name), data_format=data_format)
        if store.exists():
            _LOGGER.info("Loading cached arrays %s", store.filename)
            return store.load()

    N, L, D = config.max_objects, config.max_tokens, config.dims
    scene_ids = sorted(set(q.scene_id for q in items))
    scene_index = {s: n for (n, s) in enumerate(scene_ids)}
    S = len(scene_ids)
    arrays = dict(
        obj_feats=np.zeros((S, N, config.object_features), dtype=np.float32),
        obj_mask=np.zeros((S, N), dtype=bool),
    )
    if config.use_patches:
        side = config.pyramid.patch_side
        arrays["patches"] = np.zeros(
            (S, config.num_patches, side * side * 3), dtype=np.uint8
        )
    if with_labels:
        spec = make_bin_spec(1.5, config.num_bins) if config.sr_mode == "bins" else None
        arrays.update(
            oce=np.zeros((S, N, D), dtype=np.float32),
            rpe=np.zeros((S, N, N, D), dtype=np.float32),
            relpos=np.zeros((S, N, config.relpos_features), dtype=np.float32),
        )
        if spec is not None:
            arrays.update(
                oce_bins=np.zeros((S, N, D), dtype=np.int64),
                rpe_bins=np.zeros((S, N, N, D), dtype=np.int64),
            )

    for s, scene_id in enumerate(scene_ids):
        scene = dataset.scene(scene_id)
        arrays["obj_feats"][s], arrays["obj_mask"][s] = object_features(scene, N)
        if config.use_patches:
            pc = config.pyramid
            pyramid = extract_pyramid(
                render_image(scene), pc.scales, pc.overlap, pc.include_full
            )
            pixels = flatten_patches(pyramid, pc.patch_side)
            arrays["patches"][s] = np.clip(np.round(pixels * 255), 0, 255)
        if with_labels:
            labels = dataset.labels(scene_id)
            if labels.dims < D:
                raise errors.DataError(
                    "Labels of {} have D={}, model needs {}".format(
                        scene_id, labels.dims, D
                    )
                )
            n = min(labels.n_objects, N)
            oce = labels.oce[:n, :D]
            rpe = labels.rpe[:n, :n, :D]
            arrays["oce"][s] = _pad(oce, (N, D), np.float32)
            arrays["rpe"][s] = _pad(rpe, (N, N, D), np.float32)
            arrays["relpos"][s] = _pad(
                relpos_rows(arrays["rpe"][s], config.relpos_pairwise),
                (N, config.relpos_features), np.float32,
            )
            if spec is not None:
                if config.num_bins in labels.rpe_bins:
                    rpe_bins = labels.rpe_bins[config.num_bins][:n, :n, :D]
                else:
                    rpe_bins = quantize(rpe.astype(float), spec)
                arrays["rpe_bins"][s] = _pad(rpe_bins, (N, N, D), np.int64)
                arrays["oce_bins"][s] = _pad(
                    quantize(2 * oce.astype(float) - 1, spec), (N, D), np.int64
                )

    Q = len(items)
    tokens = np.zeros((Q, L), dtype=np.int32)
    for k, q in enumerate(items):
        tokens[k] = QUESTION_VOCAB.encode(q.text, L)[0]
    arrays.update(
        tokens=tokens,
        token_mask=tokens != PAD,
        answers=np.array([ANSWER_INDEX[q.answer] for q in items], dtype=np.int64),
        scene_index=np.array([scene_index[q.scene_id] for q in items], dtype=np.int64),
        is_spatial=np.array([q.is_spatial for q in items], dtype=bool),
        axis=np.array(
            [RELATION_AXIS.get(q.relation, -1) for q in items], dtype=np.int64
        ),
    )
    subject, obj = [], []
    for q in items:
        if q.is_spatial:
            scene = dataset.scene(q.scene_id)
            subject.append(scene.index(q.subject_id))
            obj.append(scene.index(q.object_id))
        else:
            subject.append(-1)
            obj.append(-1)
    arrays.update(
        subject_index=np.array(subject, dtype=np.int64),
        object_index=np.array(obj, dtype=np.int64),
    )
    if store is not None:
        store.save(arrays)
    return arrays


def make_batch(arrays, indices, dtype=np.float32):
    """Return the :class:`Batch` of questions `indices`."""
    indices = np.asarray(indices)
    s = arrays["scene_index"][indices]

    def get(name, cast=None):
        if name not in arrays:
            return None
        a = arrays[name][s]
        return a.astype(cast) if cast is not None else a

    patches = get("patches")
    if patches is not None:
        patches = patches.astype(dtype) / 255
    return Batch(
        tokens=arrays["tokens"][indices],
        token_mask=arrays["token_mask"][indices],
        obj_feats=get("obj_feats", dtype),
        obj_mask=get("obj_mask"),
        answers=arrays["answers"][indices],
        patches=patches,
        relpos=get("relpos", dtype),
        oce=get("oce", dtype),
        rpe=get("rpe", dtype),
        oce_bins=get("oce_bins"),
        rpe_bins=get("rpe_bins"),
    )


def iter_batches(arrays, batch_size, order=None, dtype=np.float32):
    """Yield `(indices, Batch)` in `order` (default: file order)."""
    n = len(arrays["tokens"])
    order = np.arange(n) if order is None else np.asarray(order)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield idx, make_batch(arrays, idx, dtype=dtype)
