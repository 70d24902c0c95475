from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from scene_dialog_dmn.dialogues import save_dialogues
from scene_dialog_dmn.errors import ConfigurationError
from scene_dialog_dmn.features import FeatureStore, save_features
from scene_dialog_dmn.models import DialogueExample, QAPair

logger = logging.getLogger("scene_dialog_dmn")

MAX_SEGMENTS = 50
NOISE_SIGMA = 0.05
# Prototypes and position codes are shared by every corpus of the same
# feature width; the corpus seed only drives events and noise.
STRUCTURE_SEED = 20190
VISUAL_EVENTS: tuple[str, ...] = ("walk", "run", "sit", "jump", "wave")
AUDIO_EVENTS: tuple[str, ...] = ("music", "speech", "bark", "knock", "laugh")
FOLLOWUP_QUESTION = "does it happen again ?"
# Scene questions asked before the follow-up, by tag.
SCENE_TAGS: tuple[str, ...] = ("event", "sound", "event", "sound", "event")

DIALOGUES_FILE = "dialogues.json"
FEATURES_DIR = "features"


@dataclass(frozen=True)
class SyntheticDialogue:
    example: DialogueExample
    visual_events: tuple[str, ...]
    audio_events: tuple[str, ...]
    visual: np.ndarray
    audio: np.ndarray
    # per question: (modality, 0-based segment) for scene questions, None for the follow-up
    planted: tuple[tuple[str, int] | None, ...]


@dataclass
class SyntheticCorpus:
    dialogues: list[SyntheticDialogue]
    num_segments: int
    feature_dim: int
    seed: int

    def examples(self) -> list[DialogueExample]:
        return [dialogue.example for dialogue in self.dialogues]

    def planted_segments(self) -> dict[tuple[str, int], tuple[str, int]]:
        planted: dict[tuple[str, int], tuple[str, int]] = {}
        for dialogue in self.dialogues:
            for index, target in enumerate(dialogue.planted):
                if target is not None:
                    planted[(dialogue.example.id, index)] = target
        return planted

    def feature_store(self) -> FeatureStore:
        """In-memory features keyed by each example's references."""
        store = FeatureStore()
        for dialogue in self.dialogues:
            store.put(dialogue.example.visual_features_ref, dialogue.visual)
            store.put(dialogue.example.audio_features_ref, dialogue.audio)
        return store


def _structure(feature_dim: int, events: tuple[str, ...], salt: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([STRUCTURE_SEED, feature_dim, salt])
    prototypes = rng.normal(0.0, 1.0, size=(len(events), feature_dim))
    positions = rng.normal(0.0, 1.0, size=(MAX_SEGMENTS, feature_dim))
    return prototypes, positions


def _render(
    events: list[str],
    vocabulary: tuple[str, ...],
    prototypes: np.ndarray,
    positions: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    rows = [prototypes[vocabulary.index(event)] + positions[k] for k, event in enumerate(events)]
    values = np.stack(rows) + rng.normal(0.0, NOISE_SIGMA, size=(len(events), prototypes.shape[1]))
    # Round through float32 so in-memory and on-disk features agree exactly.
    return values.astype(np.float32).astype(np.float64)


def _plant_followup(events: list[str], segment: int, wants_repeat: bool, rng: np.random.Generator) -> None:
    """A repeat goes in the closing segment; otherwise every other copy is replaced."""
    event = events[segment]
    if wants_repeat:
        events[-1] = event
        return
    alternatives = [e for e in VISUAL_EVENTS if e != event]
    for k in range(len(events)):
        if k != segment and events[k] == event:
            events[k] = alternatives[int(rng.integers(len(alternatives)))]


def _question(tag: str, segment: int) -> list[str]:
    if tag == "event":
        return ["what", "happens", "in", "segment", str(segment + 1), "?"]
    return ["what", "sound", "is", "in", "segment", str(segment + 1), "?"]


def generate_synthetic(
    num_dialogues: int,
    num_segments: int,
    feature_dim: int,
    seed: int,
    *,
    audio_dim: int | None = None,
) -> SyntheticCorpus:
    """
    Scene dialogues with planted events.

    Each dialogue asks what happens or what sound is heard in a segment, in the
    order of SCENE_TAGS, then whether the last asked event happens again. The
    last asked segment is never the closing one; a repeat, when there is one,
    is planted in the closing segment, which the summary names. Follow-up
    answers are yes/no, balanced by construction.
    """
    audio_width = feature_dim if audio_dim is None else audio_dim
    for name, value in (("num_dialogues", num_dialogues), ("num_segments", num_segments), ("feature_dim", feature_dim), ("audio_dim", audio_width)):
        if value < 1:
            raise ConfigurationError(f"{name} must be positive, got {value}")
    if num_segments > MAX_SEGMENTS:
        raise ConfigurationError(
            f"num_segments={num_segments} exceeds the {MAX_SEGMENTS} available position codes"
        )

    visual_protos, visual_positions = _structure(feature_dim, VISUAL_EVENTS, 0)
    audio_protos, audio_positions = _structure(audio_width, AUDIO_EVENTS, 1)
    rng = np.random.default_rng(seed)
    dialogues: list[SyntheticDialogue] = []
    for index in range(num_dialogues):
        visual_events = [VISUAL_EVENTS[int(i)] for i in rng.integers(len(VISUAL_EVENTS), size=num_segments)]
        audio_events = [AUDIO_EVENTS[int(i)] for i in rng.integers(len(AUDIO_EVENTS), size=num_segments)]
        segments = [int(k) for k in rng.integers(num_segments, size=len(SCENE_TAGS) - 1)]
        segments.append(int(rng.integers(max(num_segments - 1, 1))))
        wants_repeat = num_segments > 1 and bool(rng.integers(2))
        _plant_followup(visual_events, segments[-1], wants_repeat, rng)

        dialogue_id = f"synth-{seed}-{index:05d}"
        pairs: list[QAPair] = []
        planted: list[tuple[str, int] | None] = []
        for tag, segment in zip(SCENE_TAGS, segments):
            events = visual_events if tag == "event" else audio_events
            pairs.append(QAPair(_question(tag, segment), [events[segment]], tag))
            planted.append(("visual" if tag == "event" else "audio", segment))
        pairs.append(QAPair(FOLLOWUP_QUESTION.split(), ["yes" if wants_repeat else "no"], "followup"))
        planted.append(None)
        example = DialogueExample(
            id=dialogue_id,
            caption=["the", "video", "starts", "with", visual_events[0], "."],
            summary=["it", "ends", "with", visual_events[-1], "."],
            qa_pairs=pairs,
            visual_features_ref=f"{FEATURES_DIR}/{dialogue_id}.visual.dmnf",
            audio_features_ref=f"{FEATURES_DIR}/{dialogue_id}.audio.dmnf",
        )
        dialogues.append(
            SyntheticDialogue(
                example=example,
                visual_events=tuple(visual_events),
                audio_events=tuple(audio_events),
                visual=_render(visual_events, VISUAL_EVENTS, visual_protos, visual_positions, rng),
                audio=_render(audio_events, AUDIO_EVENTS, audio_protos, audio_positions, rng),
                planted=tuple(planted),
            )
        )
    logger.debug("Generated %d synthetic dialogues (N=%d, D=%d)", num_dialogues, num_segments, feature_dim)
    return SyntheticCorpus(dialogues=dialogues, num_segments=num_segments, feature_dim=feature_dim, seed=seed)


def oracle_answer(dialogue: SyntheticDialogue, question_index: int) -> list[str]:
    """Answer from the planted events alone."""
    target = dialogue.planted[question_index]
    if target is not None:
        modality, segment = target
        events = dialogue.visual_events if modality == "visual" else dialogue.audio_events
        return [events[segment]]
    previous = dialogue.planted[question_index - 1]
    if previous is None or previous[0] != "visual":
        raise ValueError(f"{dialogue.example.id}: follow-up {question_index} has no visual question before it")
    event = dialogue.visual_events[previous[1]]
    return ["yes" if dialogue.visual_events.count(event) > 1 else "no"]


def oracle_accuracy(corpus: SyntheticCorpus) -> float:
    hits = total = 0
    for dialogue in corpus.dialogues:
        for index, pair in enumerate(dialogue.example.qa_pairs):
            total += 1
            hits += int(oracle_answer(dialogue, index) == pair.answer)
    return hits / total if total else 0.0


def majority_baseline_accuracy(corpus: SyntheticCorpus) -> float:
    """Accuracy on scene questions of always giving the most frequent scene answer."""
    answers = [
        pair.answer[0]
        for dialogue in corpus.dialogues
        for pair in dialogue.example.qa_pairs
        if pair.tag in ("event", "sound")
    ]
    if not answers:
        return 0.0
    _, count = Counter(answers).most_common(1)[0]
    return count / len(answers)


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> Path:
    """Write `dialogues.json` plus one DMNF file per stream; returns the JSON path."""
    root = Path(out_dir)
    (root / FEATURES_DIR).mkdir(parents=True, exist_ok=True)
    examples: list[DialogueExample] = []
    for dialogue in corpus.dialogues:
        visual_path = (root / dialogue.example.visual_features_ref).resolve()
        audio_path = (root / dialogue.example.audio_features_ref).resolve()
        save_features(visual_path, dialogue.visual)
        save_features(audio_path, dialogue.audio)
        examples.append(
            replace(dialogue.example, visual_features_ref=str(visual_path), audio_features_ref=str(audio_path))
        )
    target = root / DIALOGUES_FILE
    save_dialogues(target, examples)
    logger.info("Wrote %d synthetic dialogues to %s", len(examples), target)
    return target
