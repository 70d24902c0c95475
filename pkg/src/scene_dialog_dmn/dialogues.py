from __future__ import annotations

import json
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Iterable

from scene_dialog_dmn.errors import ParseError, ResolutionError
from scene_dialog_dmn.features import read_feature_array
from scene_dialog_dmn.models import DialogueExample

logger = logging.getLogger("scene_dialog_dmn")


def _resolve_ref(base_dir: Path, ref: str) -> str:
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    return os.path.normpath(path)


def load_dialogues(path: str | Path, *, verify_features: bool = True) -> list[DialogueExample]:
    """
    Load an AVSD-style JSON array of dialogue records.

    Feature references are resolved against the JSON file's directory. With
    `verify_features` every referenced file must exist and parse.
    """
    source = Path(path)
    if not source.is_file():
        raise ResolutionError(str(source), "dialogue file")
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(payload, list):
        raise ParseError(f"{source}: expected a JSON array of dialogue records")

    base_dir = source.parent
    dialogues: list[DialogueExample] = []
    for index, record in enumerate(payload):
        dialogue = DialogueExample.from_dict(record, index)
        dialogue = replace(
            dialogue,
            visual_features_ref=_resolve_ref(base_dir, dialogue.visual_features_ref),
            audio_features_ref=_resolve_ref(base_dir, dialogue.audio_features_ref),
        )
        if verify_features:
            for ref in (dialogue.visual_features_ref, dialogue.audio_features_ref):
                if not Path(ref).is_file():
                    raise ResolutionError(ref, f"feature file for record {index}")
                read_feature_array(ref)
        dialogues.append(dialogue)
    logger.debug("Loaded %d dialogues from %s", len(dialogues), source)
    return dialogues


def _relative_ref(base_dir: Path, ref: str) -> str:
    try:
        return os.path.relpath(ref, base_dir)
    except ValueError:
        return ref


def serialize_dialogues(dialogues: Iterable[DialogueExample], base_dir: Path) -> list[dict]:
    records = []
    for dialogue in dialogues:
        record = dialogue.to_dict()
        record["visual_features"] = _relative_ref(base_dir, dialogue.visual_features_ref)
        record["audio_features"] = _relative_ref(base_dir, dialogue.audio_features_ref)
        records.append(record)
    return records


def save_dialogues(path: str | Path, dialogues: Iterable[DialogueExample]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    records = serialize_dialogues(dialogues, target.parent)
    target.write_text(json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
