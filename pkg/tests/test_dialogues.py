from __future__ import annotations

import json
import re

import numpy as np
import pytest

from scene_dialog_dmn.dialogues import load_dialogues, save_dialogues
from scene_dialog_dmn.errors import ParseError, ResolutionError
from scene_dialog_dmn.features import save_features
from scene_dialog_dmn.models import DialogueExample


def _record(**overrides):
    record = {
        "id": "clip-1",
        "caption": "A man walks in.",
        "summary": "He sits down.",
        "dialog": [
            {"question": "What happens first?", "answer": "He walks in."},
            {"question": "Is there sound?", "answer": "Yes, music.", "tag": "sound"},
        ],
        "visual_features": "features/clip-1.visual.dmnf",
        "audio_features": "features/clip-1.audio.dmnf",
    }
    record.update(overrides)
    return record


@pytest.fixture
def corpus_dir(tmp_path):
    save_features(tmp_path / "features" / "clip-1.visual.dmnf", np.ones((3, 4)))
    save_features(tmp_path / "features" / "clip-1.audio.dmnf", np.ones((3, 2)))
    return tmp_path


def _write(directory, records):
    path = directory / "dialogues.json"
    path.write_text(json.dumps(records), encoding="utf-8")
    return path


def test_loads_and_resolves_feature_paths(corpus_dir):
    (dialogue,) = load_dialogues(_write(corpus_dir, [_record()]))
    assert dialogue.id == "clip-1"
    assert dialogue.caption == ["a", "man", "walks", "in", "."]
    assert dialogue.target.answer == ["yes", ",", "music", "."]
    assert dialogue.target.tag == "sound"
    assert [pair.question for pair in dialogue.history] == [["what", "happens", "first", "?"]]
    assert dialogue.visual_features_ref == str(corpus_dir / "features" / "clip-1.visual.dmnf")


def test_save_then_load(corpus_dir):
    dialogues = load_dialogues(_write(corpus_dir, [_record()]))
    out = corpus_dir / "copy" / "dialogues.json"
    save_dialogues(out, dialogues)
    saved = json.loads(out.read_text(encoding="utf-8"))
    assert saved[0]["visual_features"] == "../features/clip-1.visual.dmnf"
    assert load_dialogues(out) == dialogues


def test_missing_feature_file(corpus_dir):
    path = _write(corpus_dir, [_record(audio_features="features/missing.dmnf")])
    with pytest.raises(ResolutionError, match="missing.dmnf"):
        load_dialogues(path)
    assert len(load_dialogues(path, verify_features=False)) == 1


@pytest.mark.parametrize(
    "record,field",
    [
        (_record(caption=None), "caption"),
        (_record(dialog=[]), "dialog"),
        (_record(dialog=[{"question": "  ", "answer": "x"}]), "dialog[0].question"),
        (_record(dialog=[{"question": "why?", "answer": "x", "tag": "other"}]), "dialog[0].tag"),
        ({"caption": "x"}, "id"),
    ],
)
def test_parse_errors_name_record_and_field(corpus_dir, record, field):
    path = _write(corpus_dir, [_record(), record])
    with pytest.raises(ParseError, match=re.escape(f"record 1: field '{field}'")):
        load_dialogues(path, verify_features=False)


def test_invalid_json(tmp_path):
    path = tmp_path / "dialogues.json"
    path.write_text("[{", encoding="utf-8")
    with pytest.raises(ParseError, match="invalid JSON"):
        load_dialogues(path)


def test_missing_dialogue_file(tmp_path):
    with pytest.raises(ResolutionError):
        load_dialogues(tmp_path / "none.json")


def test_record_round_trip():
    example = DialogueExample.from_dict(_record(), 0)
    assert DialogueExample.from_dict(example.to_dict(), 0) == example
