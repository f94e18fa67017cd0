r"""Exception hierarchy.

Every error raised by the package derives from :class:`SWSError`.  The three
intermediate classes :class:`UsageError`, :class:`DataError` and
:class:`NumericalError` carry the exit code used by :mod:`sws.cli`.

>>> issubclass(EmptyBox, DataError)
True
>>> EmptyBox.exit_code
2
"""
__all__ = [
    "SWSError",
    "UsageError",
    "DataError",
    "NumericalError",
    "InvalidSpec",
    "ConfigError",
    "ContractError",
    "ProjectionError",
    "TemplateUnsatisfiable",
    "AmbiguousRelation",
    "InvalidDimensions",
    "InvalidNormalizer",
    "NormalizerTooSmall",
    "EmptyBox",
    "DimensionError",
    "OutOfRange",
    "InvalidClass",
    "NoObjects",
    "UnsupportedVersion",
    "CorruptLabels",
    "NoData",
    "DegenerateGrid",
    "InvalidBox",
    "ShapeError",
    "EmptyLoss",
    "EmptySubset",
    "EmptyEval",
    "AuditGap",
]


class SWSError(Exception):
    r"""Base class for all errors."""

    exit_code = 2


class UsageError(SWSError):
    r"""Bad invocation or configuration."""

    exit_code = 1


class DataError(SWSError):
    r"""Inputs violate a data contract."""

    exit_code = 2


class NumericalError(SWSError):
    r"""NaN/inf encountered during optimization."""

    exit_code = 3


######################################################################
# Usage errors
class InvalidSpec(UsageError):
    r"""Generator or binning parameters out of range."""


class ConfigError(UsageError):
    r"""Inconsistent model/training configuration."""


class ContractError(UsageError):
    r"""A function was called outside of its contract."""


######################################################################
# Data errors
class ProjectionError(DataError):
    r"""Object cannot be projected by the camera."""


class TemplateUnsatisfiable(DataError):
    r"""No question template can be instantiated for the scene."""


class AmbiguousRelation(DataError):
    r"""Two objects tie on the queried axis."""


class InvalidDimensions(DataError):
    r"""Zero image height or width."""


class InvalidNormalizer(DataError):
    r"""Non-positive depth normalizer."""


class NormalizerTooSmall(DataError):
    r"""Depth value exceeds the dataset normalizer."""


class EmptyBox(DataError):
    r"""Bounding box covers no pixel."""

    def __init__(self, msg, index=None):
        if index is not None:
            msg = "object {}: {}".format(index, msg)
        self.index = index
        DataError.__init__(self, msg)


class DimensionError(DataError):
    r"""Centroid dimensionalities differ."""


class OutOfRange(DataError):
    r"""Value outside its admissible range ([-1, 1] for quantization)."""


class InvalidClass(DataError):
    r"""Bin index outside of ``0..C-1``."""


class NoObjects(DataError):
    r"""Label building received no boxes."""


class UnsupportedVersion(DataError):
    r"""Binary container with an unknown format version."""


class CorruptLabels(DataError):
    r"""Label file is truncated or violates a label invariant."""


class NoData(DataError):
    r"""Reduction over an empty collection."""


class DegenerateGrid(DataError):
    r"""Patch grid produces an empty patch."""


class InvalidBox(DataError):
    r"""Bounding box outside the unit square or without area."""


class ShapeError(DataError):
    r"""Incompatible tensor shapes."""

    def __init__(self, msg, *shapes):
        if shapes:
            msg = "{}: {}".format(msg, " vs ".join(str(tuple(s)) for s in shapes))
        DataError.__init__(self, msg)


class EmptyLoss(DataError):
    r"""The loss mask removes every element."""


class EmptySubset(DataError):
    r"""Few-shot fraction selects no example."""


class EmptyEval(DataError):
    r"""Metric computed over an empty selection."""


class AuditGap(UserWarning):
    r"""A spatial question has no SR prediction for its object pair."""
