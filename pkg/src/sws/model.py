r"""Fusion transformer with spatial-reasoning heads.

The model has four stages:

1. A small cross-modal encoder producing a summary token `x` `(B, H)`,
   object features `v` `(B, N, H)` and question features `t` `(B, L, H)`.
2. Optional relative-position inputs projected to `r` `(B, N, H)`, added to
   `v` before (``early``) or to `v̂` after (``late``) the fusion stack.
3. A fusion transformer over the concatenation `[x, v, t, p]` where `p` are
   embedded spatial-pyramid patches.
4. Heads: answer logits from `x̂` and spatial-reasoning predictions from
   `v̂` (per-object centroids, pairwise differences or bin logits).

Which spatial losses are trained is chosen by ``sr_task``; the heads
matching ``sr_mode`` always exist so that untrained baselines can be audited
too.

>>> config = ModelConfig()
>>> config.hidden, config.fusion_layers, config.alpha, config.beta
(64, 2, 0.9, 0.1)
>>> ModelConfig(hidden=30, heads=4)
Traceback (most recent call last):
    ...
ConfigError: hidden=30 not divisible by heads=4
"""
import collections
import dataclasses
import logging
import typing

import numpy as np

from . import errors
from . import nnkit
from .geometry import SUPPORTED_BINS
from .nnkit import Tensor
from .objects import Record
from .patches import PyramidConfig, embed_patches
from .scenegen import ANSWERS, COLORS, SHAPES, WORDS

__all__ = [
    "ModelConfig",
    "Batch",
    "EncoderOutputs",
    "ModelOutputs",
    "SpatialVQAModel",
    "SR_TASKS",
    "SR_MODES",
    "RELPOS_INPUTS",
    "OBJECT_FEATURES",
]

_LOGGER = logging.getLogger(__name__)

SR_TASKS = ("none", "oce", "rpe", "oce+rpe")
SR_MODES = ("regression", "bins")
RELPOS_INPUTS = ("none", "early", "late")

# One-hot shape and color followed by the normalized box (x1, y1, x2, y2).
OBJECT_FEATURES = len(SHAPES) + len(COLORS) + 4

# Loss coefficients (alpha, beta) per SR mode.
DEFAULT_COEFFICIENTS = {"regression": (0.9, 0.1), "bins": (0.7, 0.3)}


@dataclasses.dataclass(frozen=True, repr=False)
class ModelConfig(Record):
    """Architecture and ablation switches.

    The defaults describe the desk-scale model; :meth:`paper` returns the
    full-size preset.
    """

    hidden: int = 64
    heads: int = 4
    lang_layers: int = 2
    vis_layers: int = 2
    cross_layers: int = 2
    fusion_layers: int = 2
    max_objects: int = 8
    max_tokens: int = 12
    dims: int = 3
    sr_task: str = "none"
    sr_mode: str = "regression"
    num_bins: int = 15
    relpos_input: str = "none"
    relpos_pairwise: bool = False
    use_patches: bool = False
    pyramid: PyramidConfig = dataclasses.field(default_factory=PyramidConfig)
    vocab_size: int = len(WORDS) + 2
    num_answers: int = len(ANSWERS)
    object_features: int = OBJECT_FEATURES
    activation: str = "gelu"
    dropout: float = 0.0
    alpha: typing.Optional[float] = None
    beta: typing.Optional[float] = None

    def __post_init__(self):
        if isinstance(self.pyramid, dict):
            object.__setattr__(self, "pyramid", PyramidConfig.from_dict(self.pyramid))
        if self.heads < 1 or self.hidden % self.heads:
            raise errors.ConfigError(
                "hidden={} not divisible by heads={}".format(self.hidden, self.heads)
            )
        for name, value, choices in [
            ("sr_task", self.sr_task, SR_TASKS),
            ("sr_mode", self.sr_mode, SR_MODES),
            ("relpos_input", self.relpos_input, RELPOS_INPUTS),
            ("activation", self.activation, ("gelu", "relu")),
        ]:
            if value not in choices:
                raise errors.ConfigError(
                    "{}={!r} not in {}".format(name, value, list(choices))
                )
        if self.dims not in (2, 3):
            raise errors.ConfigError("dims must be 2 or 3, got {}".format(self.dims))
        if self.sr_mode == "bins" and self.num_bins not in SUPPORTED_BINS:
            raise errors.ConfigError(
                "num_bins={} not in {}".format(self.num_bins, list(SUPPORTED_BINS))
            )
        alpha, beta = DEFAULT_COEFFICIENTS[self.sr_mode]
        if self.alpha is None:
            object.__setattr__(self, "alpha", alpha)
        if self.beta is None:
            object.__setattr__(self, "beta", beta)
        for name in ("alpha", "beta"):
            if not 0 < getattr(self, name) <= 1:
                raise errors.ConfigError(
                    "{} must be in (0, 1], got {}".format(name, getattr(self, name))
                )

    @classmethod
    def _nested(cls):
        return {"pyramid": PyramidConfig}

    @classmethod
    def paper(cls, **kw):
        """Full-size preset: H=512, 9/5/5 encoder layers, 5 fusion layers,
        36 objects."""
        args = dict(
            hidden=512,
            heads=8,
            lang_layers=9,
            vis_layers=5,
            cross_layers=5,
            fusion_layers=5,
            max_objects=36,
            max_tokens=20,
        )
        args.update(kw)
        return cls(**args)

    @classmethod
    def ablations(cls, **kw):
        """Return the named configurations of the ablation study."""
        return collections.OrderedDict(
            [
                ("baseline", cls(**kw)),
                ("weak_spatial_reg", cls(sr_task="rpe", **kw)),
                ("weak_spatial_bins", cls(sr_task="rpe", sr_mode="bins", **kw)),
                ("oce_reg", cls(sr_task="oce", **kw)),
                ("oce_bins", cls(sr_task="oce", sr_mode="bins", **kw)),
                ("joint_oce_rpe", cls(sr_task="oce+rpe", sr_mode="bins", **kw)),
                ("early_fusion", cls(relpos_input="early", **kw)),
                ("late_fusion", cls(relpos_input="late", **kw)),
                ("early_fusion_sr",
                 cls(sr_task="rpe", sr_mode="bins", relpos_input="early", **kw)),
                ("late_fusion_sr",
                 cls(sr_task="rpe", sr_mode="bins", relpos_input="late", **kw)),
                ("autoencoder",
                 cls(sr_task="rpe", sr_mode="regression", relpos_input="early", **kw)),
                ("patches", cls(use_patches=True, **kw)),
                ("full",
                 cls(sr_task="rpe", sr_mode="bins", relpos_input="early",
                     use_patches=True, **kw)),
            ]
        )

    @property
    def num_patches(self):
        return self.pyramid.num_patches if self.use_patches else 0

    @property
    def patch_features(self):
        return self.pyramid.patch_side ** 2 * 3

    @property
    def relpos_features(self):
        return self.dims * (self.max_objects if self.relpos_pairwise else 1)

    @property
    def sequence_length(self):
        return 1 + self.max_objects + self.max_tokens + self.num_patches


@dataclasses.dataclass
class Batch(object):
    """Model inputs and spatial targets for `B` questions.

    Targets are only required when the corresponding loss is trained.
    """

    tokens: np.ndarray  # (B, L) int
    token_mask: np.ndarray  # (B, L) bool
    obj_feats: np.ndarray  # (B, N, F)
    obj_mask: np.ndarray  # (B, N) bool
    answers: typing.Optional[np.ndarray] = None  # (B,) int
    patches: typing.Optional[np.ndarray] = None  # (B, P, side*side*3)
    relpos: typing.Optional[np.ndarray] = None  # (B, N, D) or (B, N, N*D)
    oce: typing.Optional[np.ndarray] = None  # (B, N, D)
    rpe: typing.Optional[np.ndarray] = None  # (B, N, N, D)
    oce_bins: typing.Optional[np.ndarray] = None  # (B, N, D) int
    rpe_bins: typing.Optional[np.ndarray] = None  # (B, N, N, D) int

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def pair_mask(self):
        """Valid ordered pairs of distinct objects, `(B, N, N)`."""
        m = self.obj_mask[:, :, None] & self.obj_mask[:, None, :]
        return m & ~np.eye(m.shape[-1], dtype=bool)[None]


@dataclasses.dataclass
class EncoderOutputs(object):
    x: Tensor  # (B, H)
    v: Tensor  # (B, N, H)
    t: Tensor  # (B, L, H)
    obj_mask: np.ndarray
    token_mask: np.ndarray


@dataclasses.dataclass
class ModelOutputs(object):
    vqa_logits: Tensor
    oce: typing.Optional[Tensor] = None
    rpe: typing.Optional[Tensor] = None
    oce_logits: typing.Optional[Tensor] = None
    rpe_logits: typing.Optional[Tensor] = None
    diagnostics: dict = dataclasses.field(default_factory=dict)


class SpatialVQAModel(nnkit.Module):
    """Encoder, fusion transformer and heads configured by a
    :class:`ModelConfig`."""

    def __init__(self, config, seed=0):
        self.config = config
        c = config
        rng = np.random.default_rng(seed)
        H, act = c.hidden, c.activation
        enc = dict(act=act, dropout=c.dropout, seed=seed)

        self.word_emb = nnkit.Embedding(c.vocab_size, H, rng)
        self.token_pos = nnkit.Embedding(c.max_tokens, H, rng)
        self.obj_proj = nnkit.Linear(c.object_features, H, rng)
        self.obj_pos = nnkit.Embedding(c.max_objects, H, rng)
        self.cls = nnkit.Parameter(rng.normal(0.0, 0.02, size=(1, H)))
        self.lang_encoder = nnkit.TransformerEncoder(c.lang_layers, H, c.heads, rng, **enc)
        self.vis_encoder = nnkit.TransformerEncoder(c.vis_layers, H, c.heads, rng, **enc)
        self.cross_encoder = nnkit.TransformerEncoder(
            c.cross_layers, H, c.heads, rng, **enc
        )
        if c.use_patches:
            self.patch_embed = nnkit.Linear(c.patch_features, H, rng)
            self.patch_pos = nnkit.Embedding(c.num_patches, H, rng)
        if c.relpos_input != "none":
            self.relpos_proj = nnkit.Linear(c.relpos_features, H, rng)
        self.fusion = nnkit.TransformerEncoder(c.fusion_layers, H, c.heads, rng, **enc)

        self.vqa_head = nnkit.Linear(H, c.num_answers, rng)
        if c.sr_mode == "regression":
            self.reg_head = nnkit.FeedForward(H, H, c.dims, rng, act=act)
        else:
            K = c.num_bins * c.dims
            self.obj_bin_head = nnkit.FeedForward(H, H, K, rng, act=act)
            self.pair_bin_head = nnkit.FeedForward(3 * H, H, K, rng, act=act)
        _LOGGER.debug("%s: %d parameters (config %s)", type(self).__name__,
                      self.num_parameters(), c.config_hash()[:12])

    ##################################################################
    # Stages
    def _check(self, batch):
        c = self.config
        B, L = batch.tokens.shape
        N = batch.obj_feats.shape[1]
        if L > c.max_tokens or N > c.max_objects:
            raise errors.ShapeError(
                "Sequence longer than configured (L, N)", (L, N),
                (c.max_tokens, c.max_objects),
            )
        if batch.obj_feats.shape[-1] != c.object_features:
            raise errors.ConfigError(
                "Object features have {} columns, config expects {}".format(
                    batch.obj_feats.shape[-1], c.object_features
                )
            )
        if c.use_patches:
            if batch.patches is None:
                raise errors.ConfigError("use_patches set but the batch has no patches")
            if batch.patches.shape[1:] != (c.num_patches, c.patch_features):
                raise errors.ConfigError(
                    "Patch tensor {} does not match {}".format(
                        batch.patches.shape[1:], (c.num_patches, c.patch_features)
                    )
                )
        if c.relpos_input != "none":
            if batch.relpos is None:
                raise errors.ConfigError(
                    "relpos_input={!r} but the batch has no relative positions".format(
                        c.relpos_input
                    )
                )
            if batch.relpos.shape[-1] != c.relpos_features:
                raise errors.ConfigError(
                    "Relative position rows have {} columns, config expects {}".format(
                        batch.relpos.shape[-1], c.relpos_features
                    )
                )

    def _broadcast_cls(self, B):
        dtype = self.cls.dtype
        return nnkit.add(Tensor(np.zeros((B, 1, self.config.hidden), dtype=dtype)),
                         self.cls)

    def encode(self, tokens, token_mask, obj_feats, obj_mask):
        """Return :class:`EncoderOutputs` for questions and objects."""
        c = self.config
        tokens = np.asarray(tokens)
        B, L = tokens.shape
        N = np.shape(obj_feats)[1]
        if L > c.max_tokens or N > c.max_objects:
            raise errors.ShapeError(
                "Sequence longer than configured (L, N)", (L, N),
                (c.max_tokens, c.max_objects),
            )
        token_mask = np.asarray(token_mask, dtype=bool)
        obj_mask = np.asarray(obj_mask, dtype=bool)
        dtype = self.cls.dtype

        t = self.word_emb(tokens) + self.token_pos(np.arange(L))
        t = self.lang_encoder(t, token_mask)
        v = self.obj_proj(Tensor(np.asarray(obj_feats, dtype=dtype)))
        v = self.vis_encoder(v + self.obj_pos(np.arange(N)), obj_mask)

        h = nnkit.concat([self._broadcast_cls(B), v, t], axis=1)
        mask = np.concatenate([np.ones((B, 1), dtype=bool), obj_mask, token_mask], axis=1)
        h = self.cross_encoder(h, mask)
        x, v, t = nnkit.split(h, [1, N, L], axis=1)
        return EncoderOutputs(
            x=nnkit.reshape(x, (B, c.hidden)), v=v, t=t,
            obj_mask=obj_mask, token_mask=token_mask,
        )

    def project_relpos(self, relpos):
        """Return `r` `(B, N, H)` from relative-position rows."""
        relpos = np.asarray(relpos, dtype=self.cls.dtype)
        if relpos.shape[-1] != self.config.relpos_features:
            raise errors.ShapeError(
                "project_relpos: rows", relpos.shape, (self.config.relpos_features,)
            )
        return self.relpos_proj(Tensor(relpos))

    def embed_patches(self, patches):
        p = embed_patches(patches, self.patch_embed, dtype=self.cls.dtype)
        return p + self.patch_pos(np.arange(patches.shape[1]))

    def fuse(self, enc, p=None, r=None):
        """Return `(x̂, v̂, t̂, p̂)` from the fusion transformer."""
        mode = self.config.relpos_input
        B, N, H = enc.v.shape
        L = enc.t.shape[1]
        v = enc.v
        if mode == "early" and r is not None:
            v = v + r
        parts = [nnkit.reshape(enc.x, (B, 1, H)), v, enc.t]
        masks = [np.ones((B, 1), dtype=bool), enc.obj_mask, enc.token_mask]
        if p is not None:
            parts.append(p)
            masks.append(np.ones(p.shape[:2], dtype=bool))
        h = nnkit.concat(parts, axis=1)
        mask = np.concatenate(masks, axis=1)
        sizes = [1, N, L] + ([p.shape[1]] if p is not None else [])
        if sum(sizes) != h.shape[1]:
            raise errors.ShapeError("fuse: segment sizes {}".format(sizes), h.shape)
        out = nnkit.split(self.fusion(h, mask), sizes, axis=1)
        x_hat = nnkit.reshape(out[0], (B, H))
        v_hat, t_hat = out[1], out[2]
        p_hat = out[3] if p is not None else None
        if mode == "late" and r is not None:
            v_hat = v_hat + r
        return x_hat, v_hat, t_hat, p_hat

    def sr_reg_head(self, v_hat):
        """Per-object centroids in [0, 1], `(B, N, D)`."""
        return nnkit.sigmoid(self.reg_head(v_hat))

    def sr_bin_head(self, v_hat, pairwise=False):
        """Bin logits `(B, N, C, D)` or, if `pairwise`, `(B, N, N, C, D)`."""
        c = self.config
        if pairwise:
            B, N, H = v_hat.shape
            logits = self.pair_bin_head(nnkit.pairwise_concat(v_hat))
            return nnkit.reshape(logits, (B, N, N, c.num_bins, c.dims))
        logits = self.obj_bin_head(v_hat)
        return nnkit.reshape(logits, v_hat.shape[:2] + (c.num_bins, c.dims))

    def forward(self, batch):
        """Return :class:`ModelOutputs` for `batch`."""
        c = self.config
        self._check(batch)
        enc = self.encode(batch.tokens, batch.token_mask, batch.obj_feats, batch.obj_mask)
        p = self.embed_patches(batch.patches) if c.use_patches else None
        r = self.project_relpos(batch.relpos) if c.relpos_input != "none" else None
        x_hat, v_hat, t_hat, p_hat = self.fuse(enc, p, r)
        out = ModelOutputs(vqa_logits=self.vqa_head(x_hat))
        if c.sr_mode == "regression":
            out.oce = self.sr_reg_head(v_hat)
            out.rpe = nnkit.pairwise_difference(out.oce)
        else:
            out.oce_logits = self.sr_bin_head(v_hat)
            out.rpe_logits = self.sr_bin_head(v_hat, pairwise=True)
        out.diagnostics = dict(
            sequence_length=_sequence_length(enc, p),
            relpos_input=c.relpos_input,
            use_patches=c.use_patches,
        )
        return out


def _sequence_length(enc, p):
    return 1 + enc.v.shape[1] + enc.t.shape[1] + (0 if p is None else p.shape[1])
