from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal

from scene_dialog_dmn.errors import ParseError
from scene_dialog_dmn.vocab import tokenize

QuestionTag = Literal["event", "sound", "followup"]
_TAGS = {"event", "sound", "followup"}


@dataclass(frozen=True)
class QAPair:
    question: list[str]
    answer: list[str]
    tag: QuestionTag | None = None

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "question": " ".join(self.question),
            "answer": " ".join(self.answer),
        }
        if self.tag is not None:
            payload["tag"] = self.tag
        return payload


@dataclass(frozen=True)
class DialogueExample:
    id: str
    caption: list[str]
    summary: list[str]
    qa_pairs: list[QAPair]
    visual_features_ref: str
    audio_features_ref: str

    @property
    def target(self) -> QAPair:
        return self.qa_pairs[-1]

    @property
    def history(self) -> list[QAPair]:
        return self.qa_pairs[:-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "caption": " ".join(self.caption),
            "summary": " ".join(self.summary),
            "dialog": [pair.to_dict() for pair in self.qa_pairs],
            "visual_features": self.visual_features_ref,
            "audio_features": self.audio_features_ref,
        }

    @classmethod
    def from_dict(cls, payload: Any, index: int) -> "DialogueExample":
        if not isinstance(payload, dict):
            raise ParseError(f"record {index}: expected an object")

        def _text(key: str) -> str:
            value = payload.get(key)
            if not isinstance(value, str):
                raise ParseError(f"record {index}: field '{key}' must be a string")
            return value

        raw_id = payload.get("id", payload.get("image_id"))
        if not isinstance(raw_id, (str, int)) or str(raw_id) == "":
            raise ParseError(f"record {index}: field 'id' is required")

        dialog = payload.get("dialog")
        if not isinstance(dialog, list) or not dialog:
            raise ParseError(f"record {index}: field 'dialog' must be a nonempty list")
        pairs: list[QAPair] = []
        for turn_no, turn in enumerate(dialog):
            if not isinstance(turn, dict):
                raise ParseError(f"record {index}: field 'dialog[{turn_no}]' must be an object")
            question = turn.get("question")
            answer = turn.get("answer")
            if not isinstance(question, str) or not tokenize(question):
                raise ParseError(f"record {index}: field 'dialog[{turn_no}].question' must be nonempty text")
            if not isinstance(answer, str):
                raise ParseError(f"record {index}: field 'dialog[{turn_no}].answer' must be a string")
            tag = turn.get("tag")
            if tag is not None and tag not in _TAGS:
                raise ParseError(f"record {index}: field 'dialog[{turn_no}].tag' is not one of {sorted(_TAGS)}")
            pairs.append(QAPair(question=tokenize(question), answer=tokenize(answer), tag=tag))

        return cls(
            id=str(raw_id),
            caption=tokenize(_text("caption")),
            summary=tokenize(_text("summary")),
            qa_pairs=pairs,
            visual_features_ref=_text("visual_features"),
            audio_features_ref=_text("audio_features"),
        )


@dataclass
class QuestionAttention:
    """What one question attended to; every list is a probability distribution."""

    question: list[str]
    caption_alpha: list[float] | None = None
    summary_alpha: list[float] | None = None
    visual_gates: list[list[float]] = field(default_factory=list)
    audio_gates: list[list[float]] = field(default_factory=list)
    fusion_modalities: list[str] = field(default_factory=list)
    fusion_beta: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": " ".join(self.question),
            "caption_alpha": self.caption_alpha,
            "summary_alpha": self.summary_alpha,
            "visual_gates": self.visual_gates,
            "audio_gates": self.audio_gates,
            "fusion_modalities": self.fusion_modalities,
            "fusion_beta": self.fusion_beta,
        }
