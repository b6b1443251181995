"""Binary checkpoint format.

Layout (little-endian)::

    b"KGPN"  u32 version=1  u32 parameter count
    per parameter: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
                   float32 payload (row-major)
    u32 metadata count, per entry: u16 length, UTF-8 "key=value"

The metadata trailer carries the network configuration; readers that stop
after the parameter block still see a valid parameter set.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"KGPN"
VERSION = 1


def save_checkpoint(path, params: dict, metadata: dict | None = None):
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    metadata = metadata or {}
    out.append(struct.pack("<I", len(metadata)))
    for key, value in metadata.items():
        raw = f"{key}={value}".encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Return ``(params, metadata)``; params are float32 arrays."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a KGPN checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims, dtype=np.int64))
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    metadata = {}
    if r.pos < len(r.buf):
        (mcount,) = r.unpack("<I")
        for _ in range(mcount):
            (mlen,) = r.unpack("<H")
            key, _, value = r.take(mlen).decode("utf-8").partition("=")
            metadata[key] = value
    return params, metadata
