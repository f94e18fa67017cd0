r"""Normalization, centroids, relative positions and log-scale binning.

Conventions
-----------
A pixel coordinate is `(x, y)` with `x` the column (growing to the right)
and `y` the row (growing downwards).  Following the pre-processing
convention of the method, a pixel of an `H x W` image is normalized to
`(x/H, y/W)`; the two agree for the square images used by default.

Depth values grow into the scene, so with the camera-frame convention
(x right, y down, z forward) a negative relative position means *left*,
*above* or *in front* respectively.

Examples
--------
>>> spec = make_bin_spec(1.5, 3)
>>> [int(quantize(v, spec)) for v in (-0.5, 0.0, 0.7)]
[0, 1, 2]
>>> float(dequantize(1, spec))
0.0
>>> centroid_2d(BBox(0.2, 0.4, 0.6, 0.8)).coords
(0.4, 0.6...)
"""
import dataclasses

import numpy as np

from . import errors
from .objects import Record

__all__ = [
    "BBox",
    "Centroid",
    "RelPosVec",
    "DepthMap",
    "BinSpec",
    "normalize_pixel",
    "normalize_depth",
    "centroid_2d",
    "centroid_3d",
    "relative_position",
    "make_bin_spec",
    "quantize",
    "dequantize",
    "SUPPORTED_BINS",
    "CENTER_TAU",
]

# Bin counts studied for the classification variant.
SUPPORTED_BINS = (3, 7, 15, 30)

# Half-width of the "zero" bin of the three-class spec.
CENTER_TAU = 1e-6


######################################################################
# Types
@dataclasses.dataclass(frozen=True)
class BBox(object):
    """Axis-aligned box in unit-normalized pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.x1, self.y1, self.x2, self.y2
        if not (0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1):
            raise errors.InvalidBox("Box {} outside the unit square".format(self))
        if not (x2 - x1) * (y2 - y1) > 0:
            raise errors.InvalidBox("Box {} has no area".format(self))

    @classmethod
    def from_pixels(cls, x1, y1, x2, y2, height, width):
        """Return the normalized box for pixel corners `(x1, y1), (x2, y2)`."""
        nx1, ny1 = normalize_pixel((x1, y1), height, width)
        nx2, ny2 = normalize_pixel((x2, y2), height, width)
        return cls(nx1, ny1, nx2, ny2)

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2])


@dataclasses.dataclass(frozen=True)
class Centroid(object):
    """Unit-normalized 2D or 3D object centroid."""

    coords: tuple

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if len(coords) not in (2, 3):
            raise errors.DimensionError("Centroid must be 2D or 3D: {}".format(coords))
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise errors.OutOfRange("Centroid {} outside [0, 1]".format(coords))
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self):
        return len(self.coords)


@dataclasses.dataclass(frozen=True)
class RelPosVec(object):
    """Difference of two centroids; each component lies in [-1, 1]."""

    delta: tuple

    def __neg__(self):
        return RelPosVec(tuple(-d for d in self.delta))


@dataclasses.dataclass
class DepthMap(object):
    """Row-major `height x width` grid of depth values.

    Raw maps hold meters; normalized maps hold values in [0, 1].
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise errors.ShapeError("DepthMap must be 2D", self.values.shape)
        if self.normalized and self.values.size:
            if self.values.min() < 0 or self.values.max() > 1:
                raise errors.OutOfRange("Normalized depth outside [0, 1]")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclasses.dataclass(frozen=True, repr=False)
class BinSpec(Record):
    r"""Log-scale partition of [-1, 1] into `num_classes` bins.

    Construct with :func:`make_bin_spec`.  Serializes to JSON with the keys
    ``lambda``, ``C``, ``widths`` and ``edges``.
    """

    lam: float
    num_classes: int
    widths: tuple
    edges: tuple

    @property
    def center_class(self):
        """Index of the bin containing zero."""
        return int(quantize(0.0, self))

    def center_interval(self):
        c = self.center_class
        return (self.edges[c], self.edges[c + 1])

    def midpoints(self):
        edges = np.asarray(self.edges)
        return 0.5 * (edges[:-1] + edges[1:])

    def to_dict(self):
        return {
            "lambda": self.lam,
            "C": self.num_classes,
            "widths": list(self.widths),
            "edges": list(self.edges),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                lam=float(d["lambda"]),
                num_classes=int(d["C"]),
                widths=tuple(float(w) for w in d["widths"]),
                edges=tuple(float(e) for e in d["edges"]),
            )
        except KeyError as err:
            raise errors.ConfigError("BinSpec missing key {}".format(err))


######################################################################
# Pre-processing
def normalize_pixel(p, H, W):
    """Return the normalized pixel `(x/H, y/W)`.

    >>> normalize_pixel((50, 100), 100, 200)
    (0.5, 0.5)
    >>> normalize_pixel((0, 0), 0, 10)
    Traceback (most recent call last):
        ...
    InvalidDimensions: Image dimensions must be positive, got H=0, W=10
    """
    if H <= 0 or W <= 0:
        raise errors.InvalidDimensions(
            "Image dimensions must be positive, got H={}, W={}".format(H, W)
        )
    x, y = p
    if not (0 <= x <= H and 0 <= y <= W):
        raise errors.OutOfRange("Pixel {} outside [0, {}] x [0, {}]".format(p, H, W))
    return (x / H, y / W)


def normalize_depth(depth, global_max):
    """Return `depth` divided by the dataset-wide maximum `global_max`."""
    if not global_max > 0:
        raise errors.InvalidNormalizer(
            "Depth normalizer must be positive, got {}".format(global_max)
        )
    values = np.asarray(depth.values, dtype=float)
    if values.size and values.max() > global_max:
        raise errors.NormalizerTooSmall(
            "Depth {} exceeds normalizer {}".format(values.max(), global_max)
        )
    return DepthMap(values=values / global_max, normalized=True)


######################################################################
# Centroids
def centroid_2d(box):
    """Return the 2D centroid (box midpoint)."""
    return Centroid(((box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2))


def box_pixels(box, height, width):
    """Return `(rows, cols)` slices of the pixels belonging to `box`.

    A pixel `(i, j)` (column, row) belongs to the box if
    `round(x1*H) <= i <= round(x2*H)` and `round(y1*W) <= j <= round(y2*W)`.
    """
    c0 = max(int(np.round(box.x1 * height)), 0)
    c1 = min(int(np.round(box.x2 * height)), width - 1)
    r0 = max(int(np.round(box.y1 * width)), 0)
    r1 = min(int(np.round(box.y2 * width)), height - 1)
    if c1 < c0 or r1 < r0:
        raise errors.EmptyBox("Box {} covers no pixel".format(box))
    return slice(r0, r1 + 1), slice(c0, c1 + 1)


def centroid_3d(box, depth):
    """Return the 3D centroid with `z_c` the mean depth inside `box`.

    >>> d = DepthMap(np.full((4, 4), 0.3), normalized=True)
    >>> round(centroid_3d(BBox(0, 0, 0.5, 0.5), d).coords[2], 12)
    0.3
    """
    if not depth.normalized:
        raise errors.ContractError("centroid_3d requires a normalized depth map")
    rows, cols = box_pixels(box, depth.height, depth.width)
    z_c = float(np.mean(np.asarray(depth.values[rows, cols], dtype=float)))
    x_c, y_c = centroid_2d(box).coords
    return Centroid((x_c, y_c, z_c))


def relative_position(a, b):
    """Return the relative position `a - b`.

    >>> relative_position(Centroid((0.1, 0.2, 0.3)), Centroid((0.4, 0.1, 0.3)))
    RelPosVec(delta=(-0.30000000000000004, 0.1, 0.0))
    """
    if a.dim != b.dim:
        raise errors.DimensionError(
            "Centroid dimensions differ: {} vs {}".format(a.dim, b.dim)
        )
    return RelPosVec(tuple(x - y for (x, y) in zip(a.coords, b.coords)))


######################################################################
# Binning
def raw_bin_widths(lam, C):
    r"""Return the un-normalized log-scale widths

    .. math::
       b_c = \lambda^{-(C - |c - C/2| + 1)} - \lambda^{-(C - |c - C/2| + 2)}

    >>> np.round(raw_bin_widths(1.5, 7)[[0, 3, 4]], 4)
    array([0.0538, 0.0159, 0.0159])
    """
    c = np.arange(C, dtype=float)
    k = C - np.abs(c - C / 2.0) + 1
    return lam ** (-k) - lam ** (-(k + 1))


def make_bin_spec(lam=1.5, C=15):
    """Return the :class:`BinSpec` partitioning [-1, 1] into `C` bins.

    For `C = 3` the intervals are `[-1, -tau), [-tau, tau], (tau, 1]` with
    `tau = 1e-6`.  Otherwise the raw widths are rescaled to sum to 2 and
    accumulated from -1.

    >>> spec = make_bin_spec(1.5, 15)
    >>> spec.edges[0], spec.edges[-1], round(sum(spec.widths), 12)
    (-1.0, 1.0, 2.0)
    >>> make_bin_spec(1.5, 2)
    Traceback (most recent call last):
        ...
    InvalidSpec: Need C >= 3 bins, got 2
    """
    if int(C) != C or C < 3:
        raise errors.InvalidSpec("Need C >= 3 bins, got {}".format(C))
    if not lam > 1:
        raise errors.InvalidSpec("Need lambda > 1, got {}".format(lam))
    C = int(C)
    if C == 3:
        edges = np.array([-1.0, -CENTER_TAU, CENTER_TAU, 1.0])
    else:
        widths = raw_bin_widths(lam, C)
        widths = widths * (2.0 / widths.sum())
        edges = np.concatenate([[-1.0], -1.0 + np.cumsum(widths)])
        edges[-1] = 1.0
    widths = np.diff(edges)
    if not np.all(widths > 0):  # pragma: no cover
        raise errors.InvalidSpec("Bin edges not strictly increasing")
    return BinSpec(
        lam=float(lam),
        num_classes=C,
        widths=tuple(float(w) for w in widths),
        edges=tuple(float(e) for e in edges),
    )


def quantize(v, spec):
    """Return the class index (or array of indices) of `v`.

    Bins are half-open `[edges[c], edges[c+1])` except the last, which is
    closed, and the center bin of the three-class spec, which is closed.

    >>> spec = make_bin_spec(1.5, 7)
    >>> int(quantize(-1.0, spec)), int(quantize(1.0, spec))
    (0, 6)
    >>> quantize(1.5, spec)
    Traceback (most recent call last):
        ...
    OutOfRange: Values outside [-1, 1]: 1.5
    """
    v = np.asarray(v, dtype=float)
    bad = ~((v >= -1.0) & (v <= 1.0))
    if np.any(bad):
        raise errors.OutOfRange(
            "Values outside [-1, 1]: {}".format(v[bad].ravel()[0] if v.ndim else v)
        )
    edges = np.asarray(spec.edges)
    idx = np.searchsorted(edges, v, side="right") - 1
    idx = np.minimum(idx, spec.num_classes - 1)
    if spec.num_classes == 3:
        idx = np.where(v == edges[2], 1, idx)
    return idx.astype(np.int64) if idx.ndim else np.int64(idx)


def dequantize(c, spec):
    """Return the midpoint of bin `c` (or an array of midpoints).

    >>> dequantize(3, make_bin_spec(1.5, 3))
    Traceback (most recent call last):
        ...
    InvalidClass: Bin index outside 0..2: 3
    """
    c = np.asarray(c)
    bad = (c < 0) | (c >= spec.num_classes)
    if np.any(bad):
        raise errors.InvalidClass(
            "Bin index outside 0..{}: {}".format(
                spec.num_classes - 1, c[bad].ravel()[0] if c.ndim else c
            )
        )
    mids = spec.midpoints()
    res = mids[c]
    return res if res.ndim else np.float64(res)
