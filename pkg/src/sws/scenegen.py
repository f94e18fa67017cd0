r"""Synthetic blocks-world scenes, analytic depth and template questions.

Everything here is a pure function of `(seed, spec)`; the exact geometry of
the generated scenes is the oracle the weakly supervised labels are checked
against.

Camera frame: x to the right, y down, z into the scene (meters).  Objects
are rendered as their axis-aligned bounding volumes, so depth is obtained
analytically by intersecting each pixel ray with the boxes.

>>> scene = generate_scene(42, SceneSpec(n_objects=5))
>>> len(scene.objects)
5
>>> scene == generate_scene(42, SceneSpec(n_objects=5))
True
>>> generate_scene(42, SceneSpec(n_objects=0))
Traceback (most recent call last):
    ...
InvalidSpec: n_objects must be >= 1, got 0
"""
from concurrent.futures import ThreadPoolExecutor

import collections
import dataclasses
import itertools
import logging
import math
import os
import typing

import numpy as np

from . import errors
from . import interfaces
from .geometry import BBox, DepthMap, centroid_3d, normalize_depth
from .objects import Record

__all__ = [
    "SHAPES",
    "COLORS",
    "RELATIONS",
    "ANSWERS",
    "WORDS",
    "Camera",
    "SceneObject",
    "Scene",
    "SceneSpec",
    "QAItem",
    "PixelBox",
    "generate_scene",
    "generate_scenes",
    "render_depth",
    "render_image",
    "project_bbox",
    "normalized_bbox",
    "generate_questions",
    "oracle_relation",
    "label_centroids",
    "make_splits",
    "AnalyticDepthSource",
    "worker_count",
]

_LOGGER = logging.getLogger(__name__)

SHAPES = ("cube", "sphere", "cylinder")
COLORS = collections.OrderedDict(
    [
        ("red", (0.86, 0.16, 0.16)),
        ("green", (0.16, 0.70, 0.24)),
        ("blue", (0.16, 0.30, 0.86)),
        ("yellow", (0.92, 0.86, 0.20)),
        ("purple", (0.55, 0.20, 0.70)),
        ("cyan", (0.20, 0.82, 0.84)),
        ("gray", (0.55, 0.55, 0.55)),
        ("brown", (0.52, 0.33, 0.16)),
    ]
)
BACKGROUND = (0.5, 0.5, 0.5)

# Relation words per axis as (negative, positive) difference.
AXIS_RELATIONS = {0: ("left", "right"), 1: ("above", "below"), 2: ("front", "behind")}
AXES = {"x": 0, "y": 1, "z": 2}
RELATIONS = ("left", "right", "above", "below", "front", "behind")
RELATION_AXIS = {r: a for a, pair in AXIS_RELATIONS.items() for r in pair}

# Smallest label difference treated as an order; below it float32 rounding of
# the stored labels may flip the sign.
_LABEL_TIE = 1e-6

# Closed answer vocabulary.
ANSWERS = RELATIONS + ("yes", "no") + SHAPES + tuple(COLORS)

SPATIAL_TEMPLATES = {
    0: ("rel_x", ["is the {a} left or right of the {b}",
                  "is the {a} right or left of the {b}"]),
    1: ("rel_y", ["is the {a} above or below the {b}",
                  "is the {a} below or above the {b}"]),
    2: ("rel_z", ["is the {a} in front of or behind the {b}",
                  "is the {a} behind or in front of the {b}"]),
}
ATTRIBUTE_TEMPLATES = {
    "color": "what color is the {shape}",
    "shape": "what shape is the {color} object",
    "exists": "is there a {color} {shape}",
}
TEMPLATES = tuple(t for (t, _) in SPATIAL_TEMPLATES.values()) + tuple(
    ATTRIBUTE_TEMPLATES
)

# Closed question vocabulary.
WORDS = tuple(
    sorted(
        set(
            " ".join(
                [v for (_, vs) in SPATIAL_TEMPLATES.values() for v in vs]
                + list(ATTRIBUTE_TEMPLATES.values())
            )
            .replace("{a}", "")
            .replace("{b}", "")
            .replace("{shape}", "")
            .replace("{color}", "")
            .split()
        )
        | set(SHAPES)
        | set(COLORS)
    )
)


def worker_count():
    """Return the worker cap from ``SWS_THREADS`` (default: CPU count)."""
    try:
        n = int(os.environ.get("SWS_THREADS", "0"))
    except ValueError:
        raise errors.UsageError("SWS_THREADS must be an integer")
    return n if n > 0 else (os.cpu_count() or 1)


######################################################################
# Types
@dataclasses.dataclass(frozen=True, repr=False)
class Camera(Record):
    """Pinhole camera; the principal point defaults to the image center."""

    focal_px: float = 48.0
    width_px: int = 64
    height_px: int = 64
    principal: typing.Optional[tuple] = None

    def __post_init__(self):
        if not (self.focal_px > 0 and self.width_px > 0 and self.height_px > 0):
            raise errors.InvalidSpec("Camera parameters must be positive")
        if self.principal is None:
            object.__setattr__(
                self, "principal", (self.width_px / 2.0, self.height_px / 2.0)
            )
        object.__setattr__(self, "principal", tuple(float(p) for p in self.principal))


@dataclasses.dataclass(frozen=True, repr=False)
class SceneObject(Record):
    object_id: str
    shape: str
    color: str
    center_m: tuple
    size_m: float

    def __post_init__(self):
        object.__setattr__(self, "center_m", tuple(float(c) for c in self.center_m))
        if self.shape not in SHAPES:
            raise errors.InvalidSpec("Unknown shape {!r}".format(self.shape))
        if self.color not in COLORS:
            raise errors.InvalidSpec("Unknown color {!r}".format(self.color))
        if not (self.center_m[2] > 0 and self.size_m > 0):
            raise errors.InvalidSpec("Object {} has z <= 0 or size <= 0".format(
                self.object_id))

    @property
    def name(self):
        """Unambiguous reference used in question text."""
        return "{} {}".format(self.color, self.shape)

    def corners(self):
        """Return the 8 corners of the bounding volume as an (8, 3) array."""
        c = np.asarray(self.center_m)
        h = self.size_m / 2.0
        signs = np.array(list(itertools.product((-1, 1), repeat=3)), dtype=float)
        return c + h * signs


@dataclasses.dataclass(frozen=True, repr=False)
class Scene(Record):
    scene_id: str
    objects: tuple
    camera: Camera
    room_depth_m: float

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.objects:
            raise errors.InvalidSpec("Scene {} has no objects".format(self.scene_id))
        centers = [o.center_m for o in self.objects]
        if len(set(centers)) != len(centers):
            raise errors.InvalidSpec("Objects share identical centers")

    def object(self, object_id):
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise errors.DataError(
            "Scene {} has no object {!r}".format(self.scene_id, object_id)
        )

    def index(self, object_id):
        self.object(object_id)
        return [o.object_id for o in self.objects].index(object_id)

    def to_dict(self):
        return dict(
            scene_id=self.scene_id,
            camera=self.camera.to_dict(),
            objects=[o.to_dict() for o in self.objects],
            room_depth_m=self.room_depth_m,
        )

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                scene_id=d["scene_id"],
                objects=[SceneObject.from_dict(o) for o in d["objects"]],
                camera=Camera.from_dict(d["camera"]),
                room_depth_m=float(d["room_depth_m"]),
            )
        except KeyError as err:
            raise errors.DataError("Scene document missing {}".format(err))


@dataclasses.dataclass(frozen=True, repr=False)
class SceneSpec(Record):
    """Parameters of the scene generator (all lengths in meters)."""

    n_objects: int = 5
    x_range: tuple = (-1.5, 1.5)
    y_range: tuple = (-1.0, 1.0)
    z_range: tuple = (2.0, 6.0)
    size_range: tuple = (0.3, 0.7)
    room_depth_m: float = 8.0
    eps_sep: float = 0.3
    max_overlap: float = 0.5
    max_attempts: int = 2000
    camera: Camera = dataclasses.field(default_factory=Camera)

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range", "size_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if isinstance(self.camera, dict):
            object.__setattr__(self, "camera", Camera.from_dict(self.camera))

    @classmethod
    def _nested(cls):
        return {"camera": Camera}

    def validate(self):
        if self.n_objects < 1:
            raise errors.InvalidSpec(
                "n_objects must be >= 1, got {}".format(self.n_objects)
            )
        if self.n_objects > len(SHAPES) * len(COLORS):
            raise errors.InvalidSpec(
                "At most {} distinct (color, shape) objects".format(
                    len(SHAPES) * len(COLORS)
                )
            )
        for name in ("x_range", "y_range", "z_range", "size_range"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise errors.InvalidSpec("{} has zero extent: {}".format(name, (lo, hi)))
        if self.z_range[0] - self.size_range[1] / 2 <= 0:
            raise errors.InvalidSpec("Objects may reach behind the camera")
        if self.room_depth_m <= self.z_range[1] + self.size_range[1] / 2:
            raise errors.InvalidSpec("Room depth must exceed the object z range")


@dataclasses.dataclass(frozen=True, repr=False)
class QAItem(Record):
    question_id: str
    scene_id: str
    text: str
    answer: str
    relation: str = "none"
    subject_id: typing.Optional[str] = None
    object_id: typing.Optional[str] = None
    is_spatial: bool = False
    template: str = ""

    def __post_init__(self):
        if self.answer not in ANSWERS:
            raise errors.DataError("Answer {!r} not in vocabulary".format(self.answer))
        if self.is_spatial and (
            self.relation not in RELATIONS or not self.subject_id or not self.object_id
        ):
            raise errors.DataError(
                "Spatial question {} lacks relation or participants".format(
                    self.question_id
                )
            )

    @property
    def axis(self):
        return RELATION_AXIS.get(self.relation)

    @property
    def is_binary(self):
        return self.answer in ("yes", "no")


class PixelBox(typing.NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float


######################################################################
# Projection and rendering
def _project(points, cam):
    """Return pixel coordinates `(u, v)` of camera-frame points."""
    points = np.asarray(points, dtype=float)
    if np.any(points[..., 2] <= 0):
        raise errors.ProjectionError("Point behind the camera")
    u = cam.focal_px * points[..., 0] / points[..., 2] + cam.principal[0]
    v = cam.focal_px * points[..., 1] / points[..., 2] + cam.principal[1]
    return u, v


def _silhouette_bbox(obj, cam):
    """Unclamped hull of the projected bounding-volume corners."""
    u, v = _project(obj.corners(), cam)
    return u.min(), v.min(), u.max(), v.max()


def project_bbox(obj, cam):
    """Return the pixel :class:`PixelBox` of `obj`, clamped to the image.

    The box is the projection of the square cross-section of the bounding
    volume through its center, facing the camera.  Its midpoint is the
    projected center and its side is `focal_px * size_m / z`; it lies
    inside the rendered silhouette of the object.

    >>> cam = Camera()
    >>> obj = SceneObject('o0', 'cube', 'red', (0.0, 0.0, 2.0), 0.5)
    >>> box = project_bbox(obj, cam)
    >>> round((box.x1 + box.x2) / 2, 6), round((box.y1 + box.y2) / 2, 6)
    (32.0, 32.0)
    >>> round(box.x2 - box.x1, 6)
    12.0
    """
    if obj.center_m[2] - obj.size_m / 2.0 <= 0:
        raise errors.ProjectionError(
            "Object {} reaches behind the camera".format(obj.object_id)
        )
    x, y, z = obj.center_m
    h = obj.size_m / 2.0
    (x1, x2), (y1, y2) = _project([(x - h, y - h, z), (x + h, y + h, z)], cam)
    W, H = cam.width_px, cam.height_px
    return PixelBox(
        float(np.clip(x1, 0, W)),
        float(np.clip(y1, 0, H)),
        float(np.clip(x2, 0, W)),
        float(np.clip(y2, 0, H)),
    )


def normalized_bbox(obj, cam):
    """Return the unit-normalized :class:`BBox` of `obj`."""
    box = project_bbox(obj, cam)
    return BBox.from_pixels(*box, height=cam.height_px, width=cam.width_px)


def _pixel_rays(cam):
    """Return ray directions `(dx, dy)` (with `dz = 1`) through pixel centers."""
    cols = np.arange(cam.width_px) + 0.5
    rows = np.arange(cam.height_px) + 0.5
    dx = (cols - cam.principal[0]) / cam.focal_px
    dy = (rows - cam.principal[1]) / cam.focal_px
    dx, dy = np.meshgrid(dx, dy)
    dx = np.where(np.abs(dx) < 1e-12, 1e-12, dx)
    dy = np.where(np.abs(dy) < 1e-12, 1e-12, dy)
    return dx, dy


def _zbuffer(scene):
    """Return `(depth, index)`: nearest hit depth and object index (-1 for
    the background) per pixel."""
    cam = scene.camera
    dx, dy = _pixel_rays(cam)
    depth = np.full(dx.shape, float(scene.room_depth_m))
    index = np.full(dx.shape, -1, dtype=int)
    for n, obj in enumerate(scene.objects):
        lo = np.asarray(obj.center_m) - obj.size_m / 2.0
        hi = np.asarray(obj.center_m) + obj.size_m / 2.0
        # Slab test along the ray t * (dx, dy, 1).
        tx1, tx2 = lo[0] / dx, hi[0] / dx
        ty1, ty2 = lo[1] / dy, hi[1] / dy
        t_near = np.maximum.reduce(
            [np.minimum(tx1, tx2), np.minimum(ty1, ty2), np.full(dx.shape, lo[2])]
        )
        t_far = np.minimum.reduce(
            [np.maximum(tx1, tx2), np.maximum(ty1, ty2), np.full(dx.shape, hi[2])]
        )
        hit = (t_near <= t_far) & (t_far > 0) & (t_near < depth)
        depth = np.where(hit, t_near, depth)
        index = np.where(hit, n, index)
    return depth, index


def render_depth(scene):
    """Return the raw :class:`DepthMap` (meters) of `scene`.

    >>> cam = Camera()
    >>> obj = SceneObject('o0', 'cube', 'red', (0.0, 0.0, 2.25), 0.5)
    >>> d = render_depth(Scene('s', [obj], cam, 5.0))
    >>> float(d.values[32, 32]), float(d.values[0, 0])
    (2.0, 5.0)
    """
    depth, _ = _zbuffer(scene)
    return DepthMap(values=depth, normalized=False)


def render_image(scene):
    """Return an `(H, W, 3)` RGB image in [0, 1].

    Surfaces are flat-colored and darken linearly with depth, which is the
    only monocular depth cue the images carry.
    """
    depth, index = _zbuffer(scene)
    palette = np.array(
        [COLORS[o.color] for o in scene.objects] + [BACKGROUND], dtype=float
    )
    rgb = palette[index]  # index -1 picks the background row
    shade = 1.0 - 0.6 * depth / scene.room_depth_m
    return rgb * shade[..., None]


@interfaces.implementer(interfaces.IDepthSource)
class AnalyticDepthSource(object):
    """Depth maps rendered on demand from known scenes."""

    def __init__(self, scenes):
        self.scenes = {s.scene_id: s for s in scenes}

    def depth_map(self, scene_id):
        return render_depth(self.scenes[scene_id])


######################################################################
# Scene generation
def _overlap(a, b):
    """Intersection area over the smaller box area."""
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    area = min((a[2] - a[0]) * (a[3] - a[1]), (b[2] - b[0]) * (b[3] - b[1]))
    return w * h / area


def generate_scene(seed, spec=None):
    """Return a :class:`Scene` for `seed` by rejection sampling.

    Objects get distinct (color, shape) pairs, lie fully inside the image,
    are at least `eps_sep` apart on some axis and overlap earlier objects on
    screen by at most `max_overlap`.
    """
    if spec is None:
        spec = SceneSpec()
    spec.validate()
    cam = spec.camera
    rng = np.random.default_rng(seed)
    combos = [(c, s) for c in COLORS for s in SHAPES]
    picks = rng.permutation(len(combos))[: spec.n_objects]
    objects, boxes = [], []
    for n, k in enumerate(picks):
        color, shape = combos[k]
        for attempt in range(spec.max_attempts):
            center = (
                rng.uniform(*spec.x_range),
                rng.uniform(*spec.y_range),
                rng.uniform(*spec.z_range),
            )
            size = rng.uniform(*spec.size_range)
            obj = SceneObject("o{}".format(n), shape, color, center, size)
            box = _silhouette_bbox(obj, cam)
            if not (
                box[0] >= 0
                and box[1] >= 0
                and box[2] <= cam.width_px
                and box[3] <= cam.height_px
            ):
                continue
            if any(
                np.all(np.abs(np.subtract(o.center_m, center)) < spec.eps_sep)
                for o in objects
            ):
                continue
            if any(_overlap(box, b) > spec.max_overlap for b in boxes):
                continue
            break
        else:
            raise errors.InvalidSpec(
                "Could not place object {} after {} attempts (seed={})".format(
                    n, spec.max_attempts, seed
                )
            )
        _LOGGER.debug("seed %s: object %s placed after %s attempts", seed, n, attempt)
        objects.append(obj)
        boxes.append(box)
    return Scene(
        scene_id="scene-{:06d}".format(seed),
        objects=objects,
        camera=cam,
        room_depth_m=spec.room_depth_m,
    )


def generate_scenes(seeds, spec=None, workers=None):
    """Return scenes for all `seeds` in order, generated in parallel.

    The output does not depend on the number of workers.
    """
    seeds = list(seeds)
    workers = workers or worker_count()
    if workers == 1 or len(seeds) < 2:
        return [generate_scene(s, spec) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: generate_scene(s, spec), seeds))


######################################################################
# Questions
def label_centroids(scene):
    """Return the `(N, 3)` centroids the weak labels of `scene` encode.

    These are the box midpoints and the mean depth inside each box, computed
    from the float32 depth map as it is stored on disk.  Any positive depth
    normalizer preserves their order.
    """
    depth = DepthMap(np.asarray(render_depth(scene).values, dtype=np.float32),
                     normalized=False)
    depth = normalize_depth(depth, scene.room_depth_m)
    return np.array(
        [centroid_3d(normalized_bbox(o, scene.camera), depth).coords
         for o in scene.objects]
    )


def oracle_relation(scene, a, b, axis, eps_tie=0.05):
    """Return the relation of object `a` to object `b` along `axis`.

    >>> cam = Camera()
    >>> objs = [SceneObject('a', 'cube', 'red', (0.4, 0.0, 1.0), 0.3),
    ...         SceneObject('b', 'cube', 'blue', (1.0, 0.0, 3.0), 0.3)]
    >>> scene = Scene('s', objs, cam, 8.0)
    >>> oracle_relation(scene, 'a', 'b', 'x'), oracle_relation(scene, 'a', 'b', 'z')
    ('left', 'front')
    >>> oracle_relation(scene, 'a', 'b', 'y')
    Traceback (most recent call last):
        ...
    AmbiguousRelation: a and b tie on axis y (|delta| = 0.0 < 0.05)
    """
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    delta = scene.object(a).center_m[ax] - scene.object(b).center_m[ax]
    if abs(delta) < eps_tie:
        raise errors.AmbiguousRelation(
            "{} and {} tie on axis {} (|delta| = {} < {})".format(
                a, b, "xyz"[ax], abs(delta), eps_tie
            )
        )
    return AXIS_RELATIONS[ax][0 if delta < 0 else 1]


def _attribute_candidates(scene):
    shapes = collections.Counter(o.shape for o in scene.objects)
    colors = collections.Counter(o.color for o in scene.objects)
    present = set((o.color, o.shape) for o in scene.objects)
    cands = []
    for o in scene.objects:
        if shapes[o.shape] == 1:
            cands.append(("color", o))
        if colors[o.color] == 1:
            cands.append(("shape", o))
    cands.append(("exists", None))
    absent = [(c, s) for c in COLORS for s in SHAPES if (c, s) not in present]
    return cands, absent


def generate_questions(
    scene, seed, k, non_spatial_ratio=0.3, prior_strength=0.7, eps_tie=0.05
):
    """Return `k` template questions about `scene`.

    A fraction `non_spatial_ratio` (rounded half up) asks about attributes;
    the rest are spatial.  Each spatial question picks a non-ambiguous
    (pair, axis) and orders the pair so that the answer is the first word of
    the template family (left/above/front) with probability
    `prior_strength`.

    A (pair, axis) is ambiguous if the centers tie within `eps_tie` or if
    the order of their :func:`label_centroids` differs from the order of
    the centers, so the weak labels never contradict an answer.

    >>> scene = generate_scene(1, SceneSpec(n_objects=5))
    >>> qs = generate_questions(scene, 1, 10)
    >>> len(qs), sum(not q.is_spatial for q in qs) >= 1
    (10, True)
    """
    if k < 1:
        raise errors.InvalidSpec("k must be >= 1, got {}".format(k))
    rng = np.random.default_rng([seed, 7919])
    n_attr = int(math.floor(non_spatial_ratio * k + 0.5))
    centers = np.array([o.center_m for o in scene.objects])
    weak = label_centroids(scene)
    spatial = []
    for (i, j) in itertools.combinations(range(len(centers)), 2):
        for ax in range(3):
            delta = centers[i, ax] - centers[j, ax]
            weak_delta = weak[i, ax] - weak[j, ax]
            if abs(delta) >= eps_tie and abs(weak_delta) > _LABEL_TIE and (
                (delta < 0) == (weak_delta < 0)
            ):
                spatial.append((i, j, ax))
    if not spatial and k - n_attr > 0:
        if non_spatial_ratio <= 0:
            raise errors.TemplateUnsatisfiable(
                "Scene {} has no unambiguous object pair".format(scene.scene_id)
            )
        _LOGGER.debug(
            "%s: no unambiguous pair, asking %s attribute questions instead",
            scene.scene_id, k - n_attr,
        )
        n_attr = k
    kinds = ["attr"] * n_attr + ["spatial"] * (k - n_attr)
    kinds = [kinds[n] for n in rng.permutation(k)]
    spatial_order = list(rng.permutation(len(spatial))) if spatial else []
    attr_cands, absent = _attribute_candidates(scene)

    items = []
    for n, kind in enumerate(kinds):
        qid = "{}-q{:02d}".format(scene.scene_id, n)
        if kind == "spatial":
            i, j, ax = spatial[spatial_order[n % len(spatial)]]
            a, b = scene.objects[i], scene.objects[j]
            want = AXIS_RELATIONS[ax][0 if rng.random() < prior_strength else 1]
            if oracle_relation(scene, a.object_id, b.object_id, ax, eps_tie) != want:
                a, b = b, a
            template, phrasings = SPATIAL_TEMPLATES[ax]
            text = phrasings[int(rng.integers(len(phrasings)))].format(
                a=a.name, b=b.name
            )
            items.append(
                QAItem(
                    question_id=qid,
                    scene_id=scene.scene_id,
                    text=text + "?",
                    answer=want,
                    relation=want,
                    subject_id=a.object_id,
                    object_id=b.object_id,
                    is_spatial=True,
                    template=template,
                )
            )
            continue
        template, obj = attr_cands[int(rng.integers(len(attr_cands)))]
        if template == "color":
            text, answer = ATTRIBUTE_TEMPLATES[template].format(shape=obj.shape), obj.color
        elif template == "shape":
            text, answer = ATTRIBUTE_TEMPLATES[template].format(color=obj.color), obj.shape
        else:
            if rng.random() < 0.5 or not absent:
                obj = scene.objects[int(rng.integers(len(scene.objects)))]
                color, shape, answer = obj.color, obj.shape, "yes"
            else:
                color, shape = absent[int(rng.integers(len(absent)))]
                answer = "no"
            text = ATTRIBUTE_TEMPLATES[template].format(color=color, shape=shape)
        items.append(
            QAItem(
                question_id=qid,
                scene_id=scene.scene_id,
                text=text + "?",
                answer=answer,
                subject_id=obj.object_id if obj is not None else None,
                template=template,
            )
        )
    return items


######################################################################
# Splits
SPLITS = ("train", "dev", "test_iid", "test_ood")


def ood_target_distribution(counts, majority, ood_shift):
    """Return target answer frequencies after shifting away from `majority`.

    The majority answer keeps a fraction `1 - ood_shift` of its frequency and
    the removed mass is shared by the other answers in proportion to their
    frequencies.

    >>> q = ood_target_distribution({'left': 80, 'right': 20}, 'left', 0.5)
    >>> round(q['left'], 6), round(q['right'], 6)
    (0.4, 0.6)
    """
    total = float(sum(counts.values()))
    p = {a: n / total for (a, n) in counts.items()}
    p_major = p.get(majority, 0.0)
    if p_major in (0.0, 1.0):
        return p
    q_major = p_major * (1.0 - ood_shift)
    scale = (1.0 - q_major) / (1.0 - p_major)
    return {a: (q_major if a == majority else pa * scale) for (a, pa) in p.items()}


def make_splits(dataset, seed, ood_shift, fractions=(0.7, 0.1, 0.1, 0.1)):
    """Return `{train, dev, test_iid, test_ood}` lists of :class:`QAItem`.

    Scenes (and hence question ids) are assigned to disjoint splits with a
    seeded permutation.  The last fraction forms the OOD pool, which is
    re-sampled per template so that the training-majority answer's frequency
    is reduced by the factor `1 - ood_shift`.
    """
    if not 0 <= ood_shift < 1:
        raise errors.InvalidSpec("ood_shift must be in [0, 1), got {}".format(ood_shift))
    dataset = list(dataset)
    if not dataset:
        raise errors.NoData("Cannot split an empty dataset")
    scene_ids = sorted(set(q.scene_id for q in dataset))
    rng = np.random.default_rng(seed)
    order = [scene_ids[n] for n in rng.permutation(len(scene_ids))]
    bounds = np.floor(np.cumsum(fractions) / np.sum(fractions) * len(order) + 0.5)
    assignment = {}
    start = 0
    for name, stop in zip(SPLITS, bounds.astype(int)):
        for sid in order[start:stop]:
            assignment[sid] = name
        start = stop
    splits = {name: [] for name in SPLITS}
    for q in dataset:
        splits[assignment[q.scene_id]].append(q)

    majority = {}
    for template in set(q.template for q in splits["train"]):
        counts = collections.Counter(
            q.answer for q in splits["train"] if q.template == template
        )
        majority[template] = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    pool = splits["test_ood"]
    shifted = []
    for template in sorted(set(q.template for q in pool)):
        groups = collections.defaultdict(list)
        for q in pool:
            if q.template == template:
                groups[q.answer].append(q)
        counts = {a: len(qs) for (a, qs) in groups.items()}
        target = ood_target_distribution(counts, majority.get(template), ood_shift)
        total = min(
            math.floor(counts[a] / qa + 1e-9) for (a, qa) in target.items() if qa > 0
        )
        for answer in sorted(groups):
            qs = groups[answer]
            n = min(len(qs), int(math.floor(target[answer] * total + 0.5)))
            picks = sorted(rng.permutation(len(qs))[:n])
            shifted.extend(qs[p] for p in picks)
    keep = set(q.question_id for q in shifted)
    splits["test_ood"] = [q for q in pool if q.question_id in keep]
    return splits
