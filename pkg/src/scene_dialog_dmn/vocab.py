from __future__ import annotations

import json
import logging
import re
from collections import Counter
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from scene_dialog_dmn.errors import ParseError, ResolutionError

if TYPE_CHECKING:
    from scene_dialog_dmn.encoders import EmbeddingTable
    from scene_dialog_dmn.models import DialogueExample

logger = logging.getLogger("scene_dialog_dmn")

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_TRAILING_PUNCT_RE = re.compile(r"^(?P<body>.*?)(?P<punct>[.,!?;:]+)$")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and split off terminal punctuation."""
    tokens: list[str] = []
    for raw in text.lower().split():
        match = _TRAILING_PUNCT_RE.match(raw)
        if match is None:
            tokens.append(raw)
            continue
        if match.group("body"):
            tokens.append(match.group("body"))
        tokens.extend(match.group("punct"))
    return tokens


class Vocabulary:
    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"Vocabulary must start with the reserved tokens {RESERVED}")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._index: dict[str, int] = {}
        for idx, token in enumerate(self.tokens):
            if token in self._index:
                raise ValueError(f"Duplicate vocabulary token: {token!r}")
            self._index[token] = idx

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(token) for token in tokens]

    def decode(self, ids: Iterable[int], *, strip_reserved: bool = True) -> list[str]:
        out: list[str] = []
        for idx in ids:
            if strip_reserved and idx in (PAD_ID, BOS_ID, EOS_ID):
                continue
            out.append(self.tokens[idx] if 0 <= idx < len(self.tokens) else UNK)
        return out

    def to_dict(self) -> dict[str, object]:
        return {"tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, payload: dict[str, object]) -> "Vocabulary":
        tokens = payload.get("tokens")
        if not isinstance(tokens, list):
            raise ParseError("Vocabulary file must contain a 'tokens' list")
        return cls([str(token) for token in tokens])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        source = Path(path)
        if not source.is_file():
            raise ResolutionError(str(source), "vocabulary")
        return cls.from_dict(json.loads(source.read_text(encoding="utf-8")))


def _dialogue_tokens(dialogue: "DialogueExample") -> Iterable[str]:
    yield from dialogue.caption
    yield from dialogue.summary
    for pair in dialogue.qa_pairs:
        yield from pair.question
        yield from pair.answer


def build_vocab(dialogues: Iterable["DialogueExample"], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    counts: Counter[str] = Counter()
    for dialogue in dialogues:
        counts.update(token for token in _dialogue_tokens(dialogue) if token not in RESERVED)
    kept = sorted(
        (token for token, count in counts.items() if count >= min_count),
        key=lambda token: (-counts[token], token),
    )
    return Vocabulary(list(RESERVED) + kept)


def load_embeddings(
    path: str | Path,
    vocab: Vocabulary,
    dim: int,
    *,
    table: "EmbeddingTable | None" = None,
    seed: int = 0,
) -> tuple["EmbeddingTable", float]:
    """
    Copy pretrained vectors ("token v1 ... v_dim" per line) into an embedding table.

    Rows for tokens missing from the file keep their current values. Returns the
    table and the fraction of non-reserved vocabulary entries that were covered.
    """
    from scene_dialog_dmn.encoders import EmbeddingTable
    from scene_dialog_dmn.tensor import Tensor

    source = Path(path)
    if not source.is_file():
        raise ResolutionError(str(source), "embedding file")
    if table is None:
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(dim)
        table = EmbeddingTable(Tensor(rng.uniform(-bound, bound, size=(len(vocab), dim))))
    if table.dim != dim or table.vocab_size != len(vocab):
        raise ValueError(
            f"Embedding table is {table.vocab_size}x{table.dim}, expected {len(vocab)}x{dim}"
        )

    matched: set[int] = set()
    with source.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(
                    f"{source}: line {line_no}: expected {dim} values, found {len(parts) - 1}"
                )
            token = parts[0]
            if token not in vocab:
                continue
            try:
                values = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{source}: line {line_no}: non-numeric value") from exc
            idx = vocab.id(token)
            table.weights.data[idx] = values
            matched.add(idx)

    real_tokens = len(vocab) - len(RESERVED)
    coverage = len(matched - set(range(len(RESERVED)))) / real_tokens if real_tokens else 0.0
    logger.info("Loaded pretrained embeddings from %s: coverage %.3f", source, coverage)
    return table, coverage
