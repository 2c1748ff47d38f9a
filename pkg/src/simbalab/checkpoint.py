"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SMBCKPT1"
    u32 entry count
    per entry: u32 name length, utf-8 name, u32 ndim, u64 dims..., float64 data (row-major)
    u32 CRC-32 of every preceding byte

Entries are written in sorted name order, so identical contents give
identical bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SMBCKPT1"


class CheckpointError(IOError):
    pass


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint corrupted: CRC mismatch")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos) \
                .reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"checkpoint truncated or malformed: {exc}") from None
    if pos != len(body):
        raise CheckpointError("checkpoint has trailing bytes")
    return out


def checkpoint_save(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(arrays))


def checkpoint_load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
