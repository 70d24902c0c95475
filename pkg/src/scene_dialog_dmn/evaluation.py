from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from scene_dialog_dmn.bleu import BleuReport, bleu
from scene_dialog_dmn.decoder import Hypothesis
from scene_dialog_dmn.episodic import AttentionGates
from scene_dialog_dmn.model import PreparedDialogue, QuestionOutput, SceneDialogModel
from scene_dialog_dmn.tensor import log_softmax, no_grad
from scene_dialog_dmn.vocab import Vocabulary

logger = logging.getLogger("scene_dialog_dmn")

ENTROPY_FLOOR = 1e-12

# (dialogue id, question index) -> (modality, planted segment)
PlantedSegments = Mapping[tuple[str, int], tuple[str, int]]


def gate_entropy_value(g: np.ndarray) -> float:
    return float(-np.sum(g * np.log(g + ENTROPY_FLOOR)))


@dataclass(frozen=True)
class TeacherForcedReport:
    token_acc: float | None
    tokens: int
    followup_acc: float | None
    followups: int
    gate_entropy: float | None
    ce: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "token_acc": self.token_acc,
            "tokens": self.tokens,
            "followup_acc": self.followup_acc,
            "followups": self.followups,
            "gate_entropy": self.gate_entropy,
            "ce": self.ce,
        }


def _answer_hits(output: QuestionOutput) -> tuple[int, int]:
    """Correct and total answer tokens; the closing EOS is not an answer token."""
    targets = output.targets[:-1] if len(output.targets) > 1 else output.targets
    predicted = np.argmax(output.logits.data[: len(targets)], axis=1)
    hits = int(np.sum(predicted == np.asarray(targets)))
    return hits, len(targets)


def _gate_entropies(gates: Mapping[str, Sequence[AttentionGates]]) -> list[float]:
    return [gate_entropy_value(entry.g.data) for history in gates.values() for entry in history]


def teacher_forced_metrics(
    model: SceneDialogModel,
    dialogues: Sequence[PreparedDialogue],
    *,
    chain_history: bool | None = None,
) -> TeacherForcedReport:
    hits = total = 0
    followup_hits = followup_total = 0
    entropies: list[float] = []
    ce_values: list[float] = []
    with no_grad():
        for dialogue in dialogues:
            for output in model.forward_dialogue(dialogue, chain_history=chain_history):
                h, n = _answer_hits(output)
                hits += h
                total += n
                if output.tag == "followup":
                    followup_hits += h
                    followup_total += n
                entropies.extend(_gate_entropies(output.gates))
                log_probs = log_softmax(output.logits, axis=1).data
                ce_values.append(
                    -float(np.mean(log_probs[np.arange(len(output.targets)), output.targets]))
                )
    return TeacherForcedReport(
        token_acc=hits / total if total else None,
        tokens=total,
        followup_acc=followup_hits / followup_total if followup_total else None,
        followups=followup_total,
        gate_entropy=float(np.mean(entropies)) if entropies else None,
        ce=float(np.mean(ce_values)) if ce_values else None,
    )


def localization_accuracy(
    model: SceneDialogModel,
    dialogues: Sequence[PreparedDialogue],
    planted: PlantedSegments,
) -> float | None:
    """Share of questions whose planted segment gets the largest gate in the last episode."""
    hits = total = 0
    with no_grad():
        for dialogue in dialogues:
            for index, output in enumerate(model.forward_dialogue(dialogue)):
                target = planted.get((dialogue.id, index))
                if target is None:
                    continue
                modality, segment = target
                history = output.gates.get(modality)
                if not history:
                    continue
                total += 1
                hits += int(int(np.argmax(history[-1].g.data)) == segment)
    return hits / total if total else None


async def _run(semaphore: asyncio.Semaphore, fn, *args, **kwargs):
    start = time.monotonic()
    async with semaphore:
        waited_s = time.monotonic() - start
        exec_start = time.monotonic()
        result = await asyncio.to_thread(fn, *args, **kwargs)
        exec_s = time.monotonic() - exec_start
    if waited_s >= 5 or exec_s >= 5:
        logger.info("Slow decode %s wait=%.2fs exec=%.2fs", getattr(fn, "__name__", "unknown"), waited_s, exec_s)
    return result


async def generate_answers_async(
    model: SceneDialogModel,
    dialogues: Sequence[PreparedDialogue],
    *,
    width: int | None = None,
    max_len: int | None = None,
    concurrency: int = 4,
) -> list[Hypothesis]:
    semaphore = asyncio.Semaphore(max(concurrency, 1))
    tasks = [
        _run(semaphore, model.generate, dialogue, width=width, max_len=max_len)
        for dialogue in dialogues
    ]
    # gather keeps input order
    return list(await asyncio.gather(*tasks))


def generate_answers(
    model: SceneDialogModel,
    dialogues: Sequence[PreparedDialogue],
    *,
    width: int | None = None,
    max_len: int | None = None,
    concurrency: int = 4,
) -> list[Hypothesis]:
    return asyncio.run(
        generate_answers_async(
            model, dialogues, width=width, max_len=max_len, concurrency=concurrency
        )
    )


def answer_tokens(hypothesis: Hypothesis, vocab: Vocabulary) -> list[str]:
    return vocab.decode(hypothesis.tokens)


def bleu_report(
    model: SceneDialogModel,
    dialogues: Sequence[PreparedDialogue],
    vocab: Vocabulary,
    *,
    width: int | None = None,
    max_len: int | None = None,
    concurrency: int = 4,
) -> tuple[BleuReport, list[list[str]]]:
    """Beam-search the last answer of every dialogue and score it against the gold answer."""
    hypotheses = generate_answers(
        model, dialogues, width=width, max_len=max_len, concurrency=concurrency
    )
    candidates = [answer_tokens(hyp, vocab) for hyp in hypotheses]
    references = [dialogue.answers[-1] for dialogue in dialogues]
    return bleu(candidates, references, 4), candidates
