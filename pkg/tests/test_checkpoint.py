from __future__ import annotations

import numpy as np
import pytest

from scene_dialog_dmn.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from scene_dialog_dmn.errors import FormatError, LengthError, ResolutionError


def _state() -> dict[str, np.ndarray]:
    rng = np.random.default_rng(0)
    return {"decoder.output.W": rng.normal(size=(5, 3)), "embedding": rng.normal(size=(4, 2)), "scalar.b": np.array([1.5])}


def test_save_and_load(tmp_path):
    path = tmp_path / "run" / "model.dmnw"
    state = _state()
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert sorted(loaded) == sorted(state)
    for name, values in state.items():
        np.testing.assert_array_equal(loaded[name], values)


def test_encoding_is_independent_of_insertion_order():
    state = _state()
    reordered = dict(reversed(list(state.items())))
    assert encode_checkpoint(state) == encode_checkpoint(reordered)


def test_bad_magic():
    blob = encode_checkpoint(_state())
    with pytest.raises(FormatError, match="bad magic"):
        decode_checkpoint(b"XXXX" + blob[4:])


def test_unsupported_version():
    blob = bytearray(encode_checkpoint(_state()))
    blob[4] = 9
    with pytest.raises(FormatError, match="version 9"):
        decode_checkpoint(bytes(blob))


def test_truncated_payload_reports_lengths():
    blob = encode_checkpoint(_state())
    with pytest.raises(LengthError) as excinfo:
        decode_checkpoint(blob[:-8], "model.dmnw")
    assert "model.dmnw" in str(excinfo.value)


def test_header_only():
    assert decode_checkpoint(MAGIC + bytes([1, 0, 0, 0, 0])) == {}


def test_missing_file(tmp_path):
    with pytest.raises(ResolutionError, match="missing.dmnw"):
        load_checkpoint(tmp_path / "missing.dmnw")
