"""Tagged binary container for named arrays plus JSON metadata.

Layout, bit-exact:
    [4-byte magic][u32 LE version=1][u64 LE header length]
    [UTF-8 JSON header][concatenated raw little-endian payloads in directory order]

The JSON header is {"arrays": [{"name", "dtype", "shape", "nbytes"}, ...],
"metadata": {...}}. Unknown header fields are ignored on load. Writes are
atomic (temp file + rename). Checkpoints use magic b"LRSM", episodes and
code datasets use b"CDRV".
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict

import numpy as np

from .errors import FormatError, IntegrityError

VERSION = 1

_DTYPES = {"f32": "<f4", "f64": "<f8", "u8": "|u1", "i64": "<i8"}
_DTYPE_NAMES = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64", np.dtype("|u1"): "u8", np.dtype("<i8"): "i64"}


def write_container(path, magic: bytes, arrays, metadata: dict | None = None):
    """arrays: iterable of (name, ndarray) or a dict. Atomic write."""
    if isinstance(arrays, dict):
        arrays = list(arrays.items())
    directory = []
    payloads = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_NAMES:
            raise FormatError(f"array {name!r} has unsupported dtype {arr.dtype}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        directory.append({"name": name, "dtype": _DTYPE_NAMES[arr.dtype], "shape": list(arr.shape), "nbytes": len(raw)})
        payloads.append(raw)
    header = json.dumps({"arrays": directory, "metadata": metadata or {}}, sort_keys=True).encode("utf-8")

    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(magic)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for raw in payloads:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path, magic: bytes):
    """Returns (OrderedDict name -> ndarray, metadata dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise IntegrityError(f"{path}: file shorter than container preamble")
    if blob[:4] != magic:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    if 16 + hlen > len(blob):
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header: {e}") from None

    arrays = OrderedDict()
    offset = 16 + hlen
    for entry in header.get("arrays", []):
        name, dtype, shape, nbytes = entry["name"], entry["dtype"], tuple(entry["shape"]), entry["nbytes"]
        if dtype not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype tag {dtype!r}")
        if offset + nbytes > len(blob):
            raise IntegrityError(f"{path}: truncated payload for array {name!r}")
        arr = np.frombuffer(blob, dtype=_DTYPES[dtype], count=int(np.prod(shape, dtype=np.int64)) if shape else 1, offset=offset)
        expect = arr.size * arr.itemsize
        if expect != nbytes:
            raise IntegrityError(f"{path}: array {name!r} shape/nbytes disagree")
        arrays[name] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise IntegrityError(f"{path}: {len(blob) - offset} trailing bytes beyond declared payload")
    return arrays, header.get("metadata", {})
