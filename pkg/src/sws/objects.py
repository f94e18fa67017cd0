r"""Provides the Record base class for configuration-like objects.
"""
__all__ = ["Record", "canonical_json"]

import dataclasses
import hashlib
import json

from . import errors
from . import interfaces


def canonical_json(obj):
    r"""Return the canonical JSON text of `obj` (sorted keys, no spaces).

    >>> canonical_json({'b': 1, 'a': [1.5, 2]})
    '{"a":[1.5,2],"b":1}'
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


###########################################################
# Classes
class Record(object):
    r"""Convenience class implementing :interface:`interfaces.ISerializable`.

    Subclasses are dataclasses (declared with ``repr=False`` so that this
    representation is used).  Only JSON-compatible field values or nested
    records are supported.

    Examples
    --------
    >>> @dataclasses.dataclass(repr=False)
    ... class A(Record):
    ...     a: int = 1
    ...     b: str = 'x'
    >>> a = A(a=2)
    >>> a
    A(a=2, b='x')
    >>> A.from_dict(a.to_dict()) == a
    True
    >>> A.from_dict({'c': 1})
    Traceback (most recent call last):
        ...
    ConfigError: Unknown keys for A: ['c']
    """

    def items(self):
        r"""Return a list `[(name, obj)]` of `(name, object)` pairs
        where the instance can be constructed as
        `ClassName(name1=obj1, name2=obj2, ...)`.
        """
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self)]

    def __iter__(self):
        return (k for (k, v) in self.items())

    def to_dict(self):
        res = {}
        for key, value in self.items():
            if isinstance(value, Record):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            res[key] = value
        return res

    @classmethod
    def from_dict(cls, d):
        r"""Construct from a dict, filling defaults for missing keys."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(fields))
        if unknown:
            raise errors.ConfigError(
                "Unknown keys for {}: {}".format(cls.__name__, unknown)
            )
        kw = {}
        for key, value in d.items():
            sub = cls._nested().get(key)
            if sub is not None and isinstance(value, dict):
                value = sub.from_dict(value)
            kw[key] = value
        return cls(**kw)

    @classmethod
    def _nested(cls):
        r"""Return `{field_name: Record subclass}` for nested records."""
        return {}

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, filename):
        with open(filename) as f:
            return cls.from_json(f.read())

    def save(self, filename):
        with open(filename, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    def replace(self, **kw):
        r"""Return a copy with some fields replaced (validation re-runs)."""
        return dataclasses.replace(self, **kw)

    def config_hash(self):
        r"""Return the SHA-256 hex digest of the canonical JSON form."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def __repr__(self):
        args = ", ".join("{}={!r}".format(k, v) for (k, v) in self.items())
        return "{}({})".format(self.__class__.__name__, args)

    def __str__(self):
        return self.__repr__()


interfaces.classImplements(Record, interfaces.ISerializable)
