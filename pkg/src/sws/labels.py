r"""Weak-supervision labels: centroids and relative positions.

Labels are built from bounding boxes and a normalized depth map only: no
ground-truth 3D geometry is used.  For `N` boxes with `D`-dimensional
centroids the targets are

* ``oce``: `(N, D)` centroids in [0, 1],
* ``rpe``: `(N, N, D)` with ``rpe[i, j] = oce[i] - oce[j]``,
* ``rpe_bins[C]``: `(N, N, D)` class indices of ``rpe`` for each bin count.

Label files are ``SRLB`` containers (see :mod:`sws.storage`).

>>> from sws.geometry import BBox, DepthMap
>>> depth = DepthMap(np.full((8, 8), 0.5), normalized=True)
>>> labels = build_labels([BBox(0, 0, 0.5, 0.5), BBox(0.5, 0.5, 1, 1)], depth,
...                       D=3, bins=[3])
>>> labels.rpe[0, 1].tolist(), labels.rpe_bins[3][0, 1].tolist()
([-0.5, -0.5, 0.0], [0, 0, 1])
"""
import dataclasses
import glob
import logging
import os
import typing

import numpy as np

from . import errors
from . import interfaces
from . import storage
from .scenegen import normalized_bbox
from .geometry import (
    SUPPORTED_BINS,
    BinSpec,
    centroid_2d,
    centroid_3d,
    make_bin_spec,
    normalize_depth,
    quantize,
)

__all__ = [
    "SRLabels",
    "build_labels",
    "check_labels",
    "write_labels",
    "read_labels",
    "dataset_depth_max",
    "scene_labels",
    "FileDepthSource",
    "LABEL_MAGIC",
    "LABEL_VERSION",
]

_LOGGER = logging.getLogger(__name__)

LABEL_MAGIC = b"SRLB"
LABEL_VERSION = 1
DEFAULT_MAX_OBJECTS = 36


@dataclasses.dataclass
class SRLabels(object):
    """Per-scene supervision targets."""

    scene_id: str
    dims: int
    oce: np.ndarray
    rpe: np.ndarray
    rpe_bins: typing.Dict[int, np.ndarray]
    bin_specs: typing.Dict[int, BinSpec]

    @property
    def n_objects(self):
        return self.oce.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SRLabels):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.dims == other.dims
            and np.array_equal(self.oce, other.oce)
            and np.array_equal(self.rpe, other.rpe)
            and sorted(self.rpe_bins) == sorted(other.rpe_bins)
            and all(np.array_equal(self.rpe_bins[C], other.rpe_bins[C])
                    for C in self.rpe_bins)
            and self.bin_specs == other.bin_specs
        )


def build_labels(
    boxes, depth, D=3, bins=SUPPORTED_BINS, scene_id="", lam=1.5,
    max_objects=DEFAULT_MAX_OBJECTS,
):
    """Return :class:`SRLabels` for `boxes` over the normalized `depth`.

    Boxes beyond `max_objects` are dropped with a warning.  An
    :class:`EmptyBox` error names the offending object index.
    """
    boxes = list(boxes)
    if not boxes:
        raise errors.NoObjects("No boxes for scene {!r}".format(scene_id))
    if D not in (2, 3):
        raise errors.DimensionError("D must be 2 or 3, got {}".format(D))
    if len(boxes) > max_objects:
        _LOGGER.warning("Scene %r: keeping %d of %d objects (max_objects)",
                        scene_id, max_objects, len(boxes))
        boxes = boxes[:max_objects]

    rows = []
    for n, box in enumerate(boxes):
        try:
            c = centroid_3d(box, depth) if D == 3 else centroid_2d(box)
        except errors.EmptyBox as err:
            raise errors.EmptyBox(str(err), index=n)
        rows.append(c.coords)
    oce = np.asarray(rows, dtype=np.float32)
    # float32 subtraction is exactly antisymmetric with a zero diagonal.
    rpe = oce[:, None, :] - oce[None, :, :]

    specs = {int(C): make_bin_spec(lam, int(C)) for C in bins}
    rpe_bins = {
        C: quantize(rpe.astype(float), spec).astype(np.uint16)
        for (C, spec) in specs.items()
    }
    return SRLabels(
        scene_id=scene_id,
        dims=D,
        oce=oce,
        rpe=rpe,
        rpe_bins=rpe_bins,
        bin_specs=specs,
    )


def check_labels(labels, error=errors.CorruptLabels):
    """Raise `error` if `labels` violates a label invariant."""
    oce, rpe = labels.oce, labels.rpe
    N, D = oce.shape
    if rpe.shape != (N, N, D) or D != labels.dims:
        raise error("rpe shape {} inconsistent with oce {}".format(rpe.shape, oce.shape))
    if np.any((oce < 0) | (oce > 1)) or np.any(np.isnan(oce)):
        raise error("oce outside [0, 1]")
    if not np.array_equal(rpe, -np.swapaxes(rpe, 0, 1)):
        raise error("rpe is not antisymmetric")
    if np.any(rpe[np.arange(N), np.arange(N)] != 0):
        raise error("rpe diagonal is not zero")
    if not np.array_equal(rpe, oce[:, None, :] - oce[None, :, :]):
        raise error("rpe does not match oce differences")
    for C, b in labels.rpe_bins.items():
        spec = labels.bin_specs.get(C)
        if spec is None or spec.num_classes != C:
            raise error("Missing bin spec for C={}".format(C))
        if b.shape != rpe.shape or not np.array_equal(
            b, quantize(rpe.astype(float), spec)
        ):
            raise error("rpe_bins[{}] disagree with quantize(rpe)".format(C))


def write_labels(labels, filename):
    """Write `labels` as an ``SRLB`` file."""
    bins = sorted(labels.rpe_bins)
    header = dict(
        scene_id=labels.scene_id,
        N=int(labels.n_objects),
        D=int(labels.dims),
        bins={str(C): labels.bin_specs[C].to_dict() for C in bins},
    )
    arrays = [
        ("oce", np.asarray(labels.oce, dtype="<f4")),
        ("rpe", np.asarray(labels.rpe, dtype="<f4")),
    ] + [("rpe_bins_{}".format(C), np.asarray(labels.rpe_bins[C], dtype="<u2"))
         for C in bins]
    storage.write_container(filename, LABEL_MAGIC, LABEL_VERSION, header, arrays)


def read_labels(filename):
    """Return the :class:`SRLabels` stored in `filename`.

    Raises :class:`CorruptLabels` if the file is malformed or the labels
    violate an invariant.
    """
    version, header, arrays = storage.read_container(
        filename, LABEL_MAGIC, {LABEL_VERSION}
    )
    try:
        specs = {int(C): BinSpec.from_dict(d) for (C, d) in header["bins"].items()}
        labels = SRLabels(
            scene_id=header["scene_id"],
            dims=int(header["D"]),
            oce=arrays["oce"].astype(np.float32),
            rpe=arrays["rpe"].astype(np.float32),
            rpe_bins={
                C: arrays["rpe_bins_{}".format(C)].astype(np.uint16) for C in specs
            },
            bin_specs=specs,
        )
    except (KeyError, ValueError, errors.ConfigError) as err:
        raise errors.CorruptLabels("{}: bad label header ({})".format(filename, err))
    if labels.n_objects != header["N"]:
        raise errors.CorruptLabels("{}: N mismatch".format(filename))
    check_labels(labels)
    return labels


def dataset_depth_max(paths):
    """Return the maximum raw depth over all ``DPTH`` files in `paths`."""
    paths = list(paths)
    if not paths:
        raise errors.NoData("No depth maps given")
    return max(float(np.max(storage.read_depth(p).values)) for p in paths)


@interfaces.implementer(interfaces.IDepthSource)
class FileDepthSource(object):
    """Depth maps stored as ``<directory>/<scene_id>.dpth``."""

    ext = ".dpth"

    def __init__(self, directory):
        if not os.path.isdir(directory):
            raise errors.DataError("No such directory: {}".format(directory))
        self.directory = directory

    def path(self, scene_id):
        return os.path.join(self.directory, scene_id + self.ext)

    def paths(self):
        return sorted(glob.glob(os.path.join(self.directory, "*" + self.ext)))

    def depth_map(self, scene_id):
        filename = self.path(scene_id)
        if not os.path.exists(filename):
            raise errors.DataError("No depth map: {}".format(filename))
        return storage.read_depth(filename)


def scene_labels(scene, depth_source, depth_max, D=3, bins=SUPPORTED_BINS,
                 max_objects=DEFAULT_MAX_OBJECTS):
    """Return the labels of a generated `scene` using its projected boxes
    and the depth map provided by `depth_source`."""
    depth = normalize_depth(depth_source.depth_map(scene.scene_id), depth_max)
    boxes = [normalized_bbox(o, scene.camera) for o in scene.objects]
    return build_labels(
        boxes, depth, D=D, bins=bins, scene_id=scene.scene_id,
        max_objects=max_objects,
    )
