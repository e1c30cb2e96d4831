"""SRWT: bit-exact binary serialization for named float32 tensor collections.

Layout (all integers little-endian):

    magic   4 bytes  "SRWT"
    version u32      currently 1
    count   u32      number of entries
    entry*  count times, sorted by name:
        name_len u32, name UTF-8 bytes
        dtype    u8   (0 = float32)
        rank     u32
        dims     rank * u32
        payload  4 * prod(dims) raw little-endian float32 bytes
    crc32   u32      CRC-32 of every preceding byte

Entries are written sorted by name, so identical tensor maps always
produce identical files and checkpoints can be compared by hash.
"""

from __future__ import annotations

import math
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor

MAGIC = b"SRWT"
VERSION = 1
DTYPE_F32 = 0


class ArchiveError(ValueError):
    """Raised when an archive cannot be written or parsed."""


def write_archive(tensors: Mapping[str, Tensor], path) -> None:
    """Write a name->Tensor map to path; tensors must be float32."""
    names = sorted(tensors.keys())
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, len(names))
    for name in names:
        if not isinstance(name, str) or not name:
            raise ArchiveError(f"invalid tensor name: {name!r}")
        t = tensors[name]
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        if data.dtype != np.float32:
            raise ArchiveError(f"entry {name!r} is {data.dtype}, archives hold float32 only")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded))
        body += encoded
        body += struct.pack("<BI", DTYPE_F32, data.ndim)
        for d in data.shape:
            body += struct.pack("<I", d)
        body += np.ascontiguousarray(data, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(body))


def read_archive(path) -> dict[str, Tensor]:
    """Parse an SRWT file back into a name->Tensor map (requires_grad=False)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArchiveError(f"{path}: cannot read archive: {exc}") from exc
    if len(raw) < 16:
        raise ArchiveError(f"{path}: truncated archive ({len(raw)} bytes) at offset {len(raw)}")
    if raw[:4] != MAGIC:
        raise ArchiveError(f"{path}: bad magic {raw[:4]!r} at offset 0")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    actual_crc = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ArchiveError(f"{path}: CRC mismatch at offset {len(raw) - 4} "
                           f"(stored {stored_crc:#010x}, computed {actual_crc:#010x})")
    body = raw[:-4]
    pos = 4
    version, count = struct.unpack_from("<II", body, pos)
    pos += 8
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported version {version} at offset 4")

    def need(nbytes: int):
        if pos + nbytes > len(body):
            raise ArchiveError(f"{path}: truncated archive at offset {pos}")

    out: dict[str, Tensor] = {}
    for _ in range(count):
        need(4)
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        need(name_len)
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        need(5)
        dtype_code, rank = struct.unpack_from("<BI", body, pos)
        pos += 5
        if dtype_code != DTYPE_F32:
            raise ArchiveError(f"{path}: unknown dtype code {dtype_code} at offset {pos - 5}")
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", body, pos) if rank else ()
        if any(d == 0 for d in dims):
            raise ArchiveError(f"{path}: zero dimension in entry {name!r} at offset {pos}")
        pos += 4 * rank
        payload = 4 * math.prod(dims) if dims else 4
        need(payload)
        arr = np.frombuffer(body, dtype="<f4", count=payload // 4, offset=pos).reshape(dims)
        pos += payload
        if name in out:
            raise ArchiveError(f"{path}: duplicate entry {name!r}")
        out[name] = Tensor(arr.astype(np.float32, copy=True))
    if pos != len(body):
        raise ArchiveError(f"{path}: {len(body) - pos} trailing bytes at offset {pos}")
    return out
