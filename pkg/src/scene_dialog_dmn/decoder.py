from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from scene_dialog_dmn.encoders import EmbeddingTable, LSTMParams, lstm_cell, run_lstm
from scene_dialog_dmn.errors import DimensionError, InputError
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import Tensor, concat, log_softmax, no_grad, stack, tile_rows
from scene_dialog_dmn.vocab import BOS_ID, EOS_ID, PAD_ID

# Never proposed by search.
_BLOCKED = (PAD_ID, BOS_ID)


@dataclass
class DecoderParams:
    embedding: EmbeddingTable
    lstm: LSTMParams  # input [s_prev ; v ; embed(y)]
    output: Affine  # h -> vocab

    @classmethod
    def create(
        cls,
        store: ParameterStore,
        prefix: str,
        hidden: int,
        embedding: EmbeddingTable,
    ) -> "DecoderParams":
        return cls(
            embedding=embedding,
            lstm=LSTMParams.create(store, f"{prefix}.lstm", 2 * hidden + embedding.dim, hidden),
            output=Affine.create(store, f"{prefix}.output", hidden, embedding.vocab_size, hidden),
        )

    @property
    def hidden(self) -> int:
        return self.lstm.hidden

    @property
    def vocab_size(self) -> int:
        return self.output.d_out


@dataclass(frozen=True)
class DecoderState:
    h: Tensor
    c: Tensor
    step: int = 0

    @classmethod
    def initial(cls, hidden: int) -> "DecoderState":
        return cls(h=Tensor(np.zeros(hidden)), c=Tensor(np.zeros(hidden)), step=0)


@dataclass(frozen=True)
class ChainState:
    """s_T of the previous answer; zero for the first question of a dialogue."""

    s_prev_final: Tensor
    question_index: int = 1

    @classmethod
    def start(cls, hidden: int) -> "ChainState":
        return cls(s_prev_final=Tensor(np.zeros(hidden)), question_index=1)

    def advance(self, final_state: DecoderState) -> "ChainState":
        return ChainState(s_prev_final=final_state.h, question_index=self.question_index + 1)

    def cut(self) -> "ChainState":
        """Same position in the dialogue with the previous answer forgotten."""
        zeros = Tensor(np.zeros(self.s_prev_final.shape))
        return ChainState(s_prev_final=zeros, question_index=self.question_index)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    score: float  # log_prob / len(tokens)
    finished: bool  # ended with EOS rather than at max_len
    completed_at: int = 0


@dataclass(frozen=True)
class BeamEntry:
    tokens: tuple[int, ...]
    log_prob: float
    state: DecoderState


@dataclass
class Beam:
    width: int
    hypotheses: list[BeamEntry] = field(default_factory=list)

    @classmethod
    def prune(cls, candidates: list[BeamEntry], width: int) -> "Beam":
        ranked = sorted(candidates, key=lambda entry: (-entry.log_prob, entry.tokens))
        return cls(width=width, hypotheses=ranked[:width])


def _check_context(chain: ChainState, v: Tensor, params: DecoderParams) -> None:
    h = params.hidden
    if v.shape != (h,) or chain.s_prev_final.shape != (h,):
        raise DimensionError(
            f"decoder: context {v.shape} and chain {chain.s_prev_final.shape} must both be ({h},)"
        )


def _check_token(token: int, params: DecoderParams) -> None:
    if not 0 <= token < params.vocab_size:
        raise InputError(f"decoder: token id {token} outside vocabulary of {params.vocab_size}")


def decode_step(
    state: DecoderState,
    chain: ChainState,
    v: Tensor,
    y_prev: int,
    params: DecoderParams,
) -> tuple[DecoderState, Tensor]:
    _check_context(chain, v, params)
    _check_token(y_prev, params)
    x = concat([chain.s_prev_final, v, params.embedding.weights[y_prev]])
    h, c = lstm_cell(x, state.h, state.c, params.lstm)
    return DecoderState(h=h, c=c, step=state.step + 1), params.output(h)


def decode_teacher_forced(
    chain: ChainState,
    v: Tensor,
    target_tokens: Sequence[int],
    params: DecoderParams,
) -> tuple[Tensor, DecoderState]:
    """
    Unroll on the gold answer "BOS a_1 .. a_K EOS".

    Returns a (K + 1, vocab) logits matrix, one row per predicted token, and the
    final state whose `h` chains into the next question.
    """
    tokens = [int(t) for t in target_tokens]
    if len(tokens) < 2 or tokens[0] != BOS_ID or tokens[-1] != EOS_ID:
        raise InputError("decode_teacher_forced: target must start with BOS and end with EOS")
    for token in tokens:
        _check_token(token, params)
    _check_context(chain, v, params)
    inputs = tokens[:-1]
    T = len(inputs)
    X = concat(
        [
            tile_rows(chain.s_prev_final, T),
            tile_rows(v, T),
            params.embedding.lookup(inputs),
        ],
        axis=1,
    )
    states, h, c = run_lstm(X, params.lstm)
    logits = params.output.rows(stack(states))
    return logits, DecoderState(h=h, c=c, step=T)


def _step_log_probs(
    state: DecoderState,
    chain: ChainState,
    v: Tensor,
    y_prev: int,
    params: DecoderParams,
) -> tuple[DecoderState, np.ndarray]:
    with no_grad():
        next_state, logits = decode_step(state, chain, v, y_prev, params)
        return next_state, log_softmax(logits).data


def score_sequence(
    chain: ChainState,
    v: Tensor,
    tokens: Sequence[int],
    params: DecoderParams,
) -> float:
    """Total log-probability of `tokens` (without the leading BOS) under step-by-step decoding."""
    state = DecoderState.initial(params.hidden)
    y_prev = BOS_ID
    total = 0.0
    for token in tokens:
        state, log_probs = _step_log_probs(state, chain, v, y_prev, params)
        total += float(log_probs[int(token)])
        y_prev = int(token)
    return total


def _check_search(width: int, max_len: int) -> None:
    if width < 1:
        raise InputError(f"beam width must be at least 1, got {width}")
    if max_len < 1:
        raise InputError(f"max_len must be at least 1, got {max_len}")


def greedy_decode(chain: ChainState, v: Tensor, params: DecoderParams, max_len: int) -> Hypothesis:
    _check_search(1, max_len)
    state = DecoderState.initial(params.hidden)
    tokens: list[int] = []
    total = 0.0
    y_prev = BOS_ID
    for _ in range(max_len):
        state, log_probs = _step_log_probs(state, chain, v, y_prev, params)
        allowed = log_probs.copy()
        allowed[list(_BLOCKED)] = -np.inf
        y_prev = int(np.argmax(allowed))
        tokens.append(y_prev)
        total += float(log_probs[y_prev])
        if y_prev == EOS_ID:
            break
    return Hypothesis(
        tokens=tuple(tokens),
        log_prob=total,
        score=total / len(tokens),
        finished=tokens[-1] == EOS_ID,
        completed_at=len(tokens),
    )


def beam_search(
    chain: ChainState,
    v: Tensor,
    params: DecoderParams,
    width: int,
    max_len: int,
    *,
    on_step: Callable[[Beam], None] | None = None,
) -> Hypothesis:
    """
    Keep the `width` best partial answers by total log-probability. A candidate
    ending in EOS, or reaching `max_len`, leaves the beam as a completed answer.

    The answer returned has the best length-normalised score; ties go to the
    earlier completion, then to the smaller token sequence.
    """
    _check_search(width, max_len)
    beam = Beam(width=width, hypotheses=[BeamEntry((), 0.0, DecoderState.initial(params.hidden))])
    completed: list[Hypothesis] = []
    for step in range(1, max_len + 1):
        candidates: list[BeamEntry] = []
        for entry in beam.hypotheses:
            y_prev = entry.tokens[-1] if entry.tokens else BOS_ID
            state, log_probs = _step_log_probs(entry.state, chain, v, y_prev, params)
            for token in range(params.vocab_size):
                if token in _BLOCKED:
                    continue
                candidates.append(
                    BeamEntry(entry.tokens + (token,), entry.log_prob + float(log_probs[token]), state)
                )
        pruned = Beam.prune(candidates, width)
        if on_step is not None:
            on_step(pruned)
        live: list[BeamEntry] = []
        for entry in pruned.hypotheses:
            ended = entry.tokens[-1] == EOS_ID
            if ended or step == max_len:
                completed.append(
                    Hypothesis(
                        tokens=entry.tokens,
                        log_prob=entry.log_prob,
                        score=entry.log_prob / len(entry.tokens),
                        finished=ended,
                        completed_at=step,
                    )
                )
            else:
                live.append(entry)
        if not live:
            break
        beam = Beam(width=width, hypotheses=live)
    return min(completed, key=lambda hyp: (-hyp.score, hyp.completed_at, hyp.tokens))
