r"""On-disk formats.

Three little-endian binary containers are used:

``DPTH`` depth maps::

    b"DPTH" | u32 height | u32 width | float32[height*width] (row-major, meters)

``SRLB`` label files and ``CKPT`` checkpoints share a tagged layout::

    magic (4 bytes) | u16 version | u32 header length | JSON header | tensors

where the JSON header lists the tensors (``name``, ``dtype``, ``shape``) in
the order their raw bytes follow.

Larger assembled arrays (training caches) go through :class:`ArrayStore`,
which stores a dict of arrays as a directory of ``.npy`` files, a single
``.npz`` or an HDF5 file (if :mod:`h5py` is installed).

>>> import tempfile, os
>>> d = tempfile.mkdtemp()
>>> f = os.path.join(d, 'x.bin')
>>> write_container(f, b'TEST', 1, {'a': 1},
...                 [('w', np.arange(3, dtype='<f4'))])
>>> version, header, arrays = read_container(f, b'TEST', {1})
>>> header['a'], arrays['w']
(1, array([0., 1., 2.], dtype=float32))
"""
from contextlib import contextmanager

import json
import logging
import os
import struct
import warnings

import numpy as np

try:
    import h5py
except ImportError:  # pragma: no cover
    h5py = None

from . import errors
from .geometry import DepthMap

__all__ = [
    "backup",
    "ensure_dir",
    "write_container",
    "read_container",
    "write_depth",
    "read_depth",
    "write_jsonl",
    "read_jsonl",
    "ArrayStore",
]

_LOGGER = logging.getLogger(__name__)

_HDF5_EXTS = set(["hf5", "hd5", "hdf5"])
DEPTH_MAGIC = b"DPTH"


@contextmanager
def backup(filename, keep=True):
    """Context to temporarily backup `filename`.

    Moves `filename` to `filename.bak` (or `filename_#.bak` with a number #
    chosen as needed to prevent a clash), then executes the context.
    If `keep` is `False` and no exceptions are raised, then the
    file is removed when the context is finished.  If an exception is
    raised, the backup is moved back.
    """
    backup_name = None
    if os.path.exists(filename):
        backup_name = filename + ".bak"
        n = 1
        while os.path.exists(backup_name):
            backup_name = filename + "_%i.bak" % (n)
            n += 1
        os.rename(filename, backup_name)

    try:
        yield backup_name
    except BaseException:
        if backup_name:
            if os.path.exists(filename):
                os.remove(filename)
            os.rename(backup_name, filename)
        raise

    if backup_name and not keep:
        os.remove(backup_name)


def ensure_dir(filename):
    dirname = os.path.dirname(os.path.abspath(filename))
    if not os.path.exists(dirname):
        _LOGGER.info("Making directory %s.", dirname)
        os.makedirs(dirname)


######################################################################
# Tagged containers
def write_container(filename, magic, version, header, arrays, keep=False):
    """Write a tagged binary container.

    Arguments
    ---------
    magic : bytes
       Four byte file signature.
    version : int
       Format version stored as u16.
    header : dict
       JSON-compatible metadata.  A ``tensors`` entry is added.
    arrays : list
       List of `(name, array)` pairs written in this order.  Arrays are
       stored little-endian with their own dtype.
    """
    header = dict(header)
    table = []
    blobs = []
    for name, a in arrays:
        a = np.ascontiguousarray(a)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        table.append(dict(name=name, dtype=a.dtype.str, shape=list(a.shape)))
        blobs.append(a.tobytes(order="C"))
    header["tensors"] = table
    head = json.dumps(header, sort_keys=True).encode("utf8")

    ensure_dir(filename)
    with backup(filename, keep=keep):
        with open(filename, "wb") as f:
            f.write(magic)
            f.write(struct.pack("<HI", version, len(head)))
            f.write(head)
            for blob in blobs:
                f.write(blob)


def read_container(filename, magic, versions, error=errors.CorruptLabels):
    """Return `(version, header, arrays)` from a tagged container.

    Raises `error` for bad magic bytes, malformed headers or truncated
    tensors, and :class:`UnsupportedVersion` if `version` is not in
    `versions`.
    """
    with open(filename, "rb") as f:
        data = f.read()
    if len(data) < 10 or data[:4] != magic:
        raise error("{}: not a {} file".format(filename, magic.decode()))
    version, head_len = struct.unpack("<HI", data[4:10])
    if version not in versions:
        raise errors.UnsupportedVersion(
            "{}: version {} not in {}".format(filename, version, sorted(versions))
        )
    offset = 10 + head_len
    if len(data) < offset:
        raise error("{}: truncated header".format(filename))
    try:
        header = json.loads(data[10:offset].decode("utf8"))
        table = header.pop("tensors")
    except (ValueError, KeyError) as err:
        raise error("{}: bad header ({})".format(filename, err))
    arrays = {}
    for entry in table:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if len(data) < offset + nbytes:
            raise error("{}: truncated tensor {!r}".format(filename, entry["name"]))
        arrays[entry["name"]] = (
            np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(data):
        raise error("{}: {} trailing bytes".format(filename, len(data) - offset))
    return version, header, arrays


######################################################################
# Depth maps
def write_depth(filename, depth):
    """Write a raw depth map in the ``DPTH`` format."""
    values = np.asarray(depth.values, dtype="<f4")
    ensure_dir(filename)
    with backup(filename, keep=False):
        with open(filename, "wb") as f:
            f.write(DEPTH_MAGIC)
            f.write(struct.pack("<II", depth.height, depth.width))
            f.write(values.tobytes(order="C"))


def read_depth(filename):
    """Return the raw :class:`DepthMap` stored in `filename`."""
    with open(filename, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != DEPTH_MAGIC:
        raise errors.DataError("{}: not a DPTH file".format(filename))
    height, width = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * height * width:
        raise errors.DataError("{}: truncated depth map".format(filename))
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    return DepthMap(values=values.astype(np.float32), normalized=False)


######################################################################
# JSON lines
def write_jsonl(filename, records):
    """Write dicts as one JSON document per line (sorted keys)."""
    ensure_dir(filename)
    with open(filename, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")


def read_jsonl(filename):
    with open(filename) as f:
        return [json.loads(line) for line in f if line.strip()]


######################################################################
# Array store
class ArrayStore(object):
    """Class for managing dicts of arrays on disk.

    Provides methods for saving and loading arrays to/from disk in a variety
    of formats.

    Examples
    --------
    >>> import tempfile, os
    >>> d = tempfile.mkdtemp()
    >>> store = ArrayStore(os.path.join(d, 'cache'), data_format='npz')
    >>> store.save(dict(a=np.arange(3)))
    >>> store.exists()
    True
    >>> store.load()['a']
    array([0, 1, 2])
    """

    def __init__(self, filename, data_format="npz", keep=False):
        if data_format == "hdf5" and h5py is None:  # pragma: no cover
            warnings.warn("h5py not installed: falling back to npz.")
            data_format = "npz"
        if data_format not in ("npy", "npz", "hdf5"):
            raise errors.ConfigError(
                "Expected data_format in ['hdf5', 'npz', 'npy'], got {}".format(
                    repr(data_format)
                )
            )
        self.data_format = data_format
        self.keep = keep
        self.filename = self._with_ext(filename, data_format)

    @staticmethod
    def get_ext(filename):
        """Return the extension of filename"""
        basename = os.path.basename(filename)
        ext = ""
        if os.path.extsep in basename:
            ext = basename.split(os.path.extsep)[-1].lower()
        return ext

    @classmethod
    def _with_ext(cls, filename, data_format):
        ext = cls.get_ext(filename)
        if data_format == "hdf5" and ext not in _HDF5_EXTS:
            filename = os.path.extsep.join([filename, "hd5"])
        elif data_format == "npz" and ext != "npz":
            filename = os.path.extsep.join([filename, "npz"])
        return filename

    def exists(self):
        return os.path.exists(self.filename)

    def save(self, arrays):
        """Save the dict `arrays` (names must be valid identifiers)."""
        if self.data_format == "npy":
            if not os.path.exists(self.filename):
                os.makedirs(self.filename)
            for name in arrays:
                _filename = os.path.join(
                    self.filename, os.path.extsep.join([name, "npy"])
                )
                with backup(_filename, keep=self.keep):
                    np.save(_filename, arrays[name])
            return
        ensure_dir(self.filename)
        with backup(self.filename, keep=self.keep):
            if self.data_format == "hdf5":
                with h5py.File(self.filename, "w") as f:
                    for name in arrays:
                        f[name] = arrays[name]
            else:
                np.savez(self.filename, **arrays)
        _LOGGER.info("Wrote %s", self.filename)

    def load(self):
        res = {}
        if self.data_format == "npy":
            for name in sorted(os.listdir(self.filename)):
                if name.endswith(".npy"):
                    res[name[:-4]] = np.asarray(
                        np.load(os.path.join(self.filename, name))
                    )
        elif self.data_format == "hdf5":
            with h5py.File(self.filename, "r") as f:
                for name in f:
                    res[name] = np.asarray(f[name])
        else:
            with np.load(self.filename) as f:
                for name in f.files:
                    res[name] = np.asarray(f[name])
        return res
