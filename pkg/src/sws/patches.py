r"""Spatial pyramid patches.

The image is divided uniformly into overlapping patches at several grid
scales, optionally followed by the whole image.  Along an axis of length `L`
a grid of `g` patches with fractional overlap `o` uses

.. math::
   \text{side} = \frac{L}{g - (g - 1) o}, \qquad
   \text{stride} = (1 - o)\,\text{side},

so that for `o = 0.5` the stride is `L/(g + 1)` and the side twice that.
Starts `k * stride` and ends `start + side` are rounded to the nearest pixel
and the last patch is clamped to end at `L`.

>>> grid_spans(8, 3, 0.5)
[(0, 4), (2, 6), (4, 8)]
>>> grid_spans(8, 2, 0.0)
[(0, 4), (4, 8)]
>>> pyramid = extract_pyramid(np.zeros((64, 64, 3)))
>>> len(pyramid)
84
"""
import dataclasses
import math

import numpy as np
from scipy import ndimage

from . import errors
from .nnkit import Tensor, default_dtype
from .objects import Record

__all__ = [
    "PyramidConfig",
    "Patch",
    "PatchPyramid",
    "grid_spans",
    "extract_pyramid",
    "resample_patch",
    "flatten_patches",
    "embed_patches",
]


@dataclasses.dataclass(frozen=True, repr=False)
class PyramidConfig(Record):
    """Patch pyramid parameters (stored in the model config)."""

    scales: tuple = (3, 5, 7)
    overlap: float = 0.5
    include_full: bool = True
    patch_side: int = 16

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(g) for g in self.scales))
        if not 0 <= self.overlap <= 0.9:
            raise errors.ConfigError(
                "overlap must be in [0, 0.9], got {}".format(self.overlap)
            )
        if not self.scales or min(self.scales) < 1:
            raise errors.ConfigError("Grid sizes must be >= 1: {}".format(self.scales))
        if self.patch_side < 1:
            raise errors.ConfigError("patch_side must be >= 1")

    @property
    def num_patches(self):
        return sum(g * g for g in self.scales) + int(self.include_full)


@dataclasses.dataclass(frozen=True)
class Patch(object):
    scale: int  # 0 for the whole image
    row: int
    col: int
    rows: tuple  # (start, stop) pixel rows
    cols: tuple
    pixels: np.ndarray = dataclasses.field(compare=False, repr=False)


@dataclasses.dataclass
class PatchPyramid(object):
    """Patches in scale-major, row-major order."""

    scales: tuple
    include_full: bool
    patches: list

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)


def _round(x):
    return int(math.floor(x + 0.5))


def grid_spans(L, g, overlap=0.5):
    """Return the `(start, stop)` pixel spans of `g` patches along `L`."""
    if not 0 <= overlap <= 0.9:
        raise errors.InvalidSpec("overlap must be in [0, 0.9], got {}".format(overlap))
    if g < 1 or L < 1:
        raise errors.DegenerateGrid("Need g >= 1 and L >= 1, got g={}, L={}".format(g, L))
    side = L / (g - (g - 1) * overlap)
    stride = side * (1 - overlap)
    spans = []
    for k in range(g):
        start = _round(k * stride)
        stop = L if k == g - 1 else min(_round(k * stride + side), L)
        if stop <= start:
            raise errors.DegenerateGrid(
                "Grid g={} on L={} gives an empty patch at k={}".format(g, L, k)
            )
        spans.append((start, stop))
    return spans


def extract_pyramid(image, scales=(3, 5, 7), overlap=0.5, include_full=True):
    """Return the :class:`PatchPyramid` of an `(H, W[, channels])` image."""
    image = np.asarray(image)
    if image.ndim not in (2, 3) or image.shape[0] == 0 or image.shape[1] == 0:
        raise errors.ShapeError("Expected a non-empty (H, W[, C]) image", image.shape)
    H, W = image.shape[:2]
    patches = []
    for g in scales:
        rows = grid_spans(H, g, overlap)
        cols = grid_spans(W, g, overlap)
        for r, (r0, r1) in enumerate(rows):
            for c, (c0, c1) in enumerate(cols):
                patches.append(
                    Patch(g, r, c, (r0, r1), (c0, c1), image[r0:r1, c0:c1])
                )
    if include_full:
        patches.append(Patch(0, 0, 0, (0, H), (0, W), image))
    return PatchPyramid(tuple(scales), include_full, patches)


def resample_patch(pixels, side=16):
    """Return `pixels` bilinearly resampled to `side x side`."""
    pixels = np.asarray(pixels, dtype=float)
    factors = (side / pixels.shape[0], side / pixels.shape[1]) + (1,) * (
        pixels.ndim - 2
    )
    out = ndimage.zoom(pixels, factors, order=1, mode="nearest")
    if out.shape[:2] != (side, side):  # pragma: no cover
        raise errors.ShapeError("Resampling failed", out.shape, (side, side))
    return out


def flatten_patches(pyramid, side=16):
    """Return the `(P, side*side*channels)` matrix of resampled patches."""
    return np.stack([resample_patch(p.pixels, side).ravel() for p in pyramid])


def embed_patches(pyramid, embedder, side=16, dtype=None):
    """Return the `(P, H)` patch features `embedder(flatten_patches(...))`.

    `pyramid` may also be an array of flattened patches with shape
    `(..., P, side*side*channels)`, such as the uint8 patches of an
    assembled dataset; the output is then `(..., P, H)`.  Rows keep the
    patch order.  `embedder` is an affine :class:`sws.nnkit.Linear` map and
    `dtype` the float type of the features (default: the current precision).
    """
    if isinstance(pyramid, np.ndarray):
        flat = pyramid
    else:
        flat = flatten_patches(pyramid, side)
    return embedder(Tensor(np.asarray(flat, dtype=dtype or default_dtype())))
