"""Versioned little-endian framed container for named arrays and byte blobs."""
from __future__ import annotations

import struct

import numpy as np

_KIND_F8 = 0
_KIND_I8 = 1
_KIND_BYTES = 2


class BinaryFormatError(ValueError):
    """Bad magic, version, or frame structure."""


def pack_frames(magic: bytes, version: int, frames) -> bytes:
    """frames: iterable of (name, numpy array or bytes)."""
    if len(magic) != 8:
        raise BinaryFormatError("magic must be 8 bytes")
    frames = list(frames)
    out = [magic, struct.pack("<II", version, len(frames))]
    for name, payload in frames:
        nb = name.encode("ascii")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        if isinstance(payload, (bytes, bytearray)):
            out.append(struct.pack("<BB", _KIND_BYTES, 1))
            out.append(struct.pack("<1Q", len(payload)))
            out.append(bytes(payload))
        else:
            arr = np.ascontiguousarray(payload)
            dtype = np.dtype("<i8") if arr.dtype.kind in "iu" else np.dtype("<f8")
            arr = arr.astype(dtype, copy=False)
            kind = _KIND_I8 if dtype.kind == "i" else _KIND_F8
            out.append(struct.pack("<BB", kind, arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(arr.tobytes())
    return b"".join(out)


def unpack_frames(blob: bytes, magic: bytes, version: int) -> dict:
    if blob[:8] != magic:
        raise BinaryFormatError(f"bad magic: expected {magic!r}")
    got_version, count = struct.unpack_from("<II", blob, 8)
    if got_version != version:
        raise BinaryFormatError(f"unsupported version {got_version} (expected {version})")
    off = 16
    frames = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("ascii")
        off += nlen
        kind, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        if kind == _KIND_BYTES:
            n = shape[0]
            frames[name] = blob[off:off + n]
            off += n
        else:
            dtype = np.dtype("<i8") if kind == _KIND_I8 else np.dtype("<f8")
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob[off:off + n * dtype.itemsize], dtype=dtype)
            frames[name] = data.reshape(shape).copy()
            off += n * dtype.itemsize
    return frames
