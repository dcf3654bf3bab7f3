"""Little-endian binary container shared by ensemble archives and quadrature files.

Layout::

    offset 0   8 bytes   magic b"POLCOH\\x00\\x01"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    reserved, 0
    offset 16  uint64    header length H in bytes
    offset 24  H bytes   UTF-8 JSON header, keys sorted
    offset 24+H          payload: the blocks listed in header["blocks"], in order

Each block entry gives ``name``, ``dtype`` (numpy little-endian string such as
``"<f8"`` or ``"<c16"``) and ``shape``. Complex values are stored as
(real, imag) float64 pairs, which is what ``"<c16"`` means byte-wise.
"""

import json
import struct

import numpy as np

MAGIC = b"POLCOH\x00\x01"
VERSION = 1
_PREFIX = struct.Struct("<8sIIQ")


class ContainerError(ValueError):
    pass


def _canonical_json(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def block_spec(name, array):
    arr = np.asarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "<|" else arr.dtype
    return {"name": name, "dtype": dt.str, "shape": list(arr.shape)}


def write_header(fh, kind, meta, blocks):
    """Write the prefix and JSON header; ``blocks`` is a list of block specs."""
    header = {"kind": kind, "meta": meta, "blocks": blocks}
    raw = _canonical_json(header)
    fh.write(_PREFIX.pack(MAGIC, VERSION, 0, len(raw)))
    fh.write(raw)


def write_block(fh, array, dtype):
    fh.write(np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes())


def write_container(path, kind, meta, arrays):
    """Write ``arrays`` (ordered mapping name -> array) as consecutive blocks."""
    specs = [block_spec(k, v) for k, v in arrays.items()]
    with open(path, "wb") as fh:
        write_header(fh, kind, meta, specs)
        for spec, arr in zip(specs, arrays.values()):
            write_block(fh, arr, spec["dtype"])


def read_header(fh):
    prefix = fh.read(_PREFIX.size)
    if len(prefix) != _PREFIX.size:
        raise ContainerError("file too short for a container header")
    magic, version, _, hlen = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise ContainerError("bad magic; not a polcoh container")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(fh.read(hlen).decode("utf-8"))
    return header


def read_block(fh, spec):
    dt = np.dtype(spec["dtype"])
    shape = tuple(spec["shape"])
    count = int(np.prod(shape, dtype=np.int64))
    data = fh.read(count * dt.itemsize)
    if len(data) != count * dt.itemsize:
        raise ContainerError(f"truncated block {spec['name']!r}")
    return np.frombuffer(data, dtype=dt).reshape(shape).astype(dt.newbyteorder("="), copy=True)


def read_container(path, expect_kind=None):
    """Return (header, {name: array})."""
    with open(path, "rb") as fh:
        header = read_header(fh)
        if expect_kind is not None and header.get("kind") != expect_kind:
            raise ContainerError(f"expected a {expect_kind!r} container, found {header.get('kind')!r}")
        arrays = {spec["name"]: read_block(fh, spec) for spec in header["blocks"]}
    return header, arrays
