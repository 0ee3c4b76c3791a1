"""Parameter checkpoints.

Layout (little-endian)::

    magic      8s  b"DRFORGE1"
    version    u16
    kind       u16 3
    meta_len   u32, followed by meta_len bytes of UTF-8 JSON
    n_tensors  u32
    per tensor: name_len u16, name UTF-8, ndim u8, dims u32 x ndim, data f32
    checksum   u64 (blake2b-64 of all preceding bytes)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..dataset import MAGIC, VERSION, checksum64
from ..errors import ChecksumMismatch, DatasetError, TruncatedFile, VersionMismatch

KIND_CHECKPOINT = 3


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    parts = [MAGIC, struct.pack("<HH", VERSION, KIND_CHECKPOINT)]
    m = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(m)), m, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", a.ndim), struct.pack(f"<{a.ndim}I", *a.shape), a.tobytes()]
    body = b"".join(parts)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(body + struct.pack("<Q", checksum64(body)))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(tensors, meta)``; raises on corruption."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such checkpoint")
    data = path.read_bytes()
    if len(data) < 24:
        raise TruncatedFile(f"{path}: too short")
    if data[:8] != MAGIC:
        raise DatasetError(f"{path}: not a DRFORGE1 file")
    version, kind = struct.unpack_from("<HH", data, 8)
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}")
    if kind != KIND_CHECKPOINT:
        raise DatasetError(f"{path}: not a checkpoint (kind {kind})")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if checksum64(data[:-8]) != stored:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    off = 12
    try:
        (mlen,) = struct.unpack_from("<I", data, off)
        off += 4
        meta = json.loads(data[off : off + mlen].decode("utf-8"))
        off += mlen
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + nl].decode("utf-8")
            off += nl
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
            off += 4 * count
    except (struct.error, ValueError) as e:
        raise TruncatedFile(f"{path}: malformed body ({e})") from e
    if off != len(data) - 8:
        raise DatasetError(f"{path}: {len(data) - 8 - off} unexpected bytes")
    return tensors, meta
