from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from scene_dialog_dmn.errors import FormatError, LengthError, ResolutionError

MAGIC = b"DMNW"
VERSION = 1

# Layout (little-endian):
#   magic[4] version:u8 count:u32
#   per tensor: name_len:u32 name:utf8 ndim:u32 dims:u32*ndim payload:f64*prod(dims)


def encode_checkpoint(state: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(state))]
    for name in sorted(state):
        values = np.ascontiguousarray(state[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(values.tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes, source: str = "<memory>") -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 9:
        raise LengthError(source, 9, len(blob))
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    offset = 9
    state: dict[str, np.ndarray] = {}

    def _need(n: int) -> None:
        if offset + n > len(blob):
            raise LengthError(source, offset + n, len(blob))

    for _ in range(count):
        _need(4)
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        _need(name_len + 4)
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        _need(4 * ndim)
        dims = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        nbytes = 8 * int(np.prod(dims))
        _need(nbytes)
        values = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=offset)
        state[name] = values.reshape(dims).astype(np.float64)
        offset += nbytes
    return state


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_checkpoint(state))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    source = Path(path)
    if not source.is_file():
        raise ResolutionError(str(source), "checkpoint")
    return decode_checkpoint(source.read_bytes(), str(source))
