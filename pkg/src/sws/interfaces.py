r"""Various Interfaces."""
__all__ = [
    "ISerializable",
    "IModule",
    "IDepthSource",
    "Interface",
    "implementer",
    "classImplements",
]

import warnings

try:
    from zope.interface import Interface, implementer, classImplements
except ImportError:  # pragma: no cover
    warnings.warn(
        "Could not import zope.interface... using a dummy version."
        + " Interfaces may not work correctly."
    )

    class Interface(object):  # pragma: no cover
        @classmethod
        def providedBy(cls, obj):
            return False

    def implementer(*interfaces):
        """Dummy"""
        return lambda cls: cls

    def classImplements(cls, *interfaces):
        """Dummy"""


class ISerializable(Interface):  # pragma: no cover
    """Interface for configuration-like records stored as JSON."""

    def items():
        """Return `[(name, value)]` such that the instance can be constructed
        as `ClassName(name1=value1, name2=value2, ...)`."""

    def to_dict():
        """Return a JSON-compatible dictionary."""

    def config_hash():
        """Return a stable hex digest of the canonical JSON form."""


class IModule(Interface):  # pragma: no cover
    """Interface for differentiable building blocks in :mod:`sws.nnkit`."""

    def named_parameters(prefix=""):
        """Return an ordered list of `(name, Tensor)` pairs."""

    def __call__(*args, **kw):
        """Apply the block, recording a backward closure."""


class IDepthSource(Interface):  # pragma: no cover
    """Interface for anything that can provide a raw depth map for a scene.

    The analytic renderer in :mod:`sws.scenegen` implements this; externally
    estimated depth maps loaded from disk do too.
    """

    def depth_map(scene_id):
        """Return the raw (meters) :class:`sws.geometry.DepthMap`."""
