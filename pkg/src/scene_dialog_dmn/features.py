from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from scene_dialog_dmn.errors import FormatError, LengthError, ResolutionError
from scene_dialog_dmn.tensor import Tensor

MAGIC = b"DMNF"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


def save_features(path: str | Path, values: np.ndarray) -> None:
    matrix = np.asarray(values)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValueError(f"Feature matrix must be (N>=1, D>=1), got {matrix.shape}")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, VERSION, matrix.shape[0], matrix.shape[1])
    target.write_bytes(header + np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_feature_array(path: str | Path) -> np.ndarray:
    source = Path(path)
    if not source.is_file():
        raise ResolutionError(str(source), "feature file")
    blob = source.read_bytes()
    if len(blob) < _HEADER.size:
        if blob[: len(MAGIC)] != MAGIC[: len(blob)]:
            raise FormatError(f"{source}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
        raise LengthError(str(source), _HEADER.size, len(blob))
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported feature file version {version}")
    if n < 1 or d < 1:
        raise FormatError(f"{source}: header declares an empty matrix ({n}x{d})")
    expected = 4 * n * d
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise LengthError(str(source), expected, actual)
    payload = np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size)
    return payload.reshape(n, d).astype(np.float64)


def load_features(path: str | Path) -> Tensor:
    return Tensor(read_feature_array(path))


class FeatureStore:
    """Read-only cache of feature matrices keyed by resolved path."""

    def __init__(self) -> None:
        self._arrays: dict[str, np.ndarray] = {}

    def get(self, path: str | Path) -> np.ndarray:
        key = str(Path(path).resolve())
        cached = self._arrays.get(key)
        if cached is None:
            cached = read_feature_array(key)
            cached.setflags(write=False)
            self._arrays[key] = cached
        return cached

    def put(self, path: str | Path, values: np.ndarray) -> None:
        array = np.array(values, dtype=np.float64)
        array.setflags(write=False)
        self._arrays[str(Path(path).resolve())] = array

    def __len__(self) -> int:
        return len(self._arrays)
