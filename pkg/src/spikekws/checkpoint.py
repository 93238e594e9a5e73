"""Named-tensor container used for checkpoints and cached feature maps.

Layout (all integers little-endian)::

    magic      8 bytes  b"SPKWCKPT"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON
    count      u32
    table      count x (name_len u16, name, dtype u8, rank u8,
                        dims rank x u32, offset u64)
    payload    float32 data; offsets are relative to the payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import CheckpointError

MAGIC = b"SPKWCKPT"
VERSION = 1
DTYPE_F32 = 0
_DTYPES = {DTYPE_F32: np.dtype("<f4")}


def write_container(path, tensors: Dict[str, np.ndarray], meta: dict = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    arrays = {k: np.array(v, dtype="<f4", order="C") for k, v in tensors.items()}
    table = bytearray()
    offset = 0
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<BB", DTYPE_F32, arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<Q", offset)
        offset += arr.nbytes
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        fh.write(table)
        for arr in arrays.values():
            fh.write(arr.tobytes())
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)``; raise :class:`CheckpointError` on any defect."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a spikekws container)")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from None
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="replace")
        dtype, rank = r.unpack("<BB")
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype tag {dtype}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        (offset,) = r.unpack("<Q")
        entries.append((name, _DTYPES[dtype], dims, offset))
    base = r.pos
    tensors = {}
    for name, dt, dims, offset in entries:
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        start = base + offset
        if start + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize,
                                      offset=start).reshape(dims).astype(np.float32)
    return tensors, meta
