from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from sacrebleu.metrics import BLEU

from scene_dialog_dmn.errors import InputError

SMOOTHING = "add1-zero-only"
SMOOTHING_HELP = (
    "BLEU smoothing: add-one on the n-gram precision for n >= 2, applied only when that "
    "precision is zero; brevity penalty exp(1 - r/c) when c < r."
)


@dataclass(frozen=True)
class BleuReport:
    bleu1: float | None
    bleu2: float | None
    bleu3: float | None
    bleu4: float | None
    brevity_penalty: float
    candidate_length: int
    reference_length: int
    precisions: list[float] = field(default_factory=list)
    smoothing: str = SMOOTHING

    def score(self, n: int) -> float | None:
        return (self.bleu1, self.bleu2, self.bleu3, self.bleu4)[n - 1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "brevity_penalty": self.brevity_penalty,
            "candidate_length": self.candidate_length,
            "reference_length": self.reference_length,
            "precisions": self.precisions,
            "smoothing": self.smoothing,
        }


def _ngram_statistics(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int,
) -> tuple[list[int], list[int], int, int]:
    if not candidates:
        return [0] * max_n, [0] * max_n, 0, 0
    metric = BLEU(tokenize="none", smooth_method="none", max_ngram_order=max_n)
    result = metric.corpus_score(
        [" ".join(tokens) for tokens in candidates],
        [[" ".join(tokens) for tokens in references]],
    )
    return list(result.counts), list(result.totals), int(result.sys_len), int(result.ref_len)


def bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> BleuReport:
    """
    Corpus BLEU-1..max_n with clipped n-gram counts and one reference per candidate.

    Clipped counts come from sacrebleu with tokenisation disabled; tokens are
    joined by spaces, so they must not contain whitespace.
    """
    if len(candidates) != len(references):
        raise InputError(f"bleu: {len(candidates)} candidates but {len(references)} references")
    if not 1 <= max_n <= 4:
        raise InputError(f"bleu: max_n must be in 1..4, got {max_n}")

    counts, totals, c, r = _ngram_statistics(candidates, references, max_n)
    precisions: list[float] = []
    for order in range(1, max_n + 1):
        hits, total = counts[order - 1], totals[order - 1]
        if hits == 0 and order >= 2:
            precisions.append((hits + 1) / (total + 1))
        else:
            precisions.append(hits / total if total else 0.0)

    if c == 0:
        brevity_penalty = 0.0
    elif c < r:
        brevity_penalty = math.exp(1.0 - r / c)
    else:
        brevity_penalty = 1.0

    scores: list[float | None] = []
    for n in range(1, 5):
        if n > max_n:
            scores.append(None)
            continue
        window = precisions[:n]
        if brevity_penalty == 0.0 or any(p == 0.0 for p in window):
            scores.append(0.0)
            continue
        scores.append(brevity_penalty * math.exp(sum(math.log(p) for p in window) / n))

    return BleuReport(
        bleu1=scores[0],
        bleu2=scores[1],
        bleu3=scores[2],
        bleu4=scores[3],
        brevity_penalty=brevity_penalty,
        candidate_length=c,
        reference_length=r,
        precisions=precisions,
    )
