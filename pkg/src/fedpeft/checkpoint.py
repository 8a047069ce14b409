"""Flat binary container of named float32 tensors.

Layout (all integers little-endian)::

    b"FPTN" | u16 version | u32 count | u32 header_len
    count x { u16 name_len | name (utf-8) | u8 ndim | ndim x u32 extent }
    raw float32 data of every tensor, in entry order

``header_len`` counts every byte before the data section, so the data
section is exactly ``sum(4 * numel)`` bytes.
"""
from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"FPTN"
VERSION = 1
_PREFIX = struct.Struct("<4sHII")


class CheckpointError(ValueError):
    pass


def _header(arrays):
    body = io.BytesIO()
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        body.write(struct.pack("<H", len(raw)))
        body.write(raw)
        body.write(struct.pack("<B", arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    body = body.getvalue()
    return _PREFIX.pack(MAGIC, VERSION, len(arrays), _PREFIX.size + len(body)) + body


def dumps(tensors):
    """Serialize a name -> array (or Tensor) mapping, preserving order."""
    arrays = {k: np.asarray(getattr(v, "data", v), dtype="<f4") for k, v in tensors.items()}
    out = io.BytesIO()
    out.write(_header(arrays))
    for arr in arrays.values():
        out.write(np.ascontiguousarray(arr).tobytes())
    return out.getvalue()


def loads(blob):
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated header")
    magic, version, count, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = _PREFIX.size
    entries = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            entries.append((name, shape))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt header ({exc})") from None
    if pos != header_len:
        raise CheckpointError("header length mismatch")
    out = {}
    for name, shape in entries:
        n = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * n
        if end > len(blob):
            raise CheckpointError(f"truncated data for {name}")
        out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos = end
    if pos != len(blob):
        raise CheckpointError("trailing bytes after data section")
    return out


def header_size(tensors):
    arrays = {k: np.asarray(getattr(v, "data", v)) for k, v in tensors.items()}
    return len(_header(arrays))


def save(path, tensors):
    blob = dumps(tensors)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
