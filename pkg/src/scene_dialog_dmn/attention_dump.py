from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from scene_dialog_dmn.errors import ContractError
from scene_dialog_dmn.model import PreparedDialogue, SceneDialogModel
from scene_dialog_dmn.models import QuestionAttention

logger = logging.getLogger("scene_dialog_dmn")

DISTRIBUTION_TOLERANCE = 1e-9


@dataclass
class ExampleAttention:
    id: str
    questions: list[QuestionAttention] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "questions": [q.to_dict() for q in self.questions]}


@dataclass
class AttentionDump:
    examples: list[ExampleAttention] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"examples": [example.to_dict() for example in self.examples]}


def _check(values: Sequence[float], label: str) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return
    if np.any(arr < 0.0) or np.any(arr > 1.0 + DISTRIBUTION_TOLERANCE):
        raise ContractError(f"{label}: entries outside [0, 1]")
    if abs(float(np.sum(arr)) - 1.0) > DISTRIBUTION_TOLERANCE:
        raise ContractError(f"{label}: sums to {float(np.sum(arr))!r}")


def validate_question(record: QuestionAttention, label: str = "question") -> None:
    for name, alpha in (("caption_alpha", record.caption_alpha), ("summary_alpha", record.summary_alpha)):
        if alpha is not None:
            _check(alpha, f"{label}.{name}")
    for name, rows in (("visual_gates", record.visual_gates), ("audio_gates", record.audio_gates)):
        for episode, gates in enumerate(rows, start=1):
            _check(gates, f"{label}.{name}[{episode}]")
    if record.fusion_beta:
        beta = np.asarray(record.fusion_beta, dtype=np.float64)
        for k in range(beta.shape[1]):
            _check(beta[:, k], f"{label}.fusion_beta[:, {k}]")


def build_attention_dump(model: SceneDialogModel, dialogues: Sequence[PreparedDialogue]) -> AttentionDump:
    dump = AttentionDump()
    for dialogue in dialogues:
        records = model.attention_records(dialogue)
        for index, record in enumerate(records):
            validate_question(record, f"{dialogue.id}[{index}]")
        dump.examples.append(ExampleAttention(id=dialogue.id, questions=records))
    return dump


def write_attention_dump(path: str | Path, dump: AttentionDump) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(dump.to_dict(), indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote attention for %d dialogues to %s", len(dump.examples), target)
    return target
