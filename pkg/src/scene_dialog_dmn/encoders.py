from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from scene_dialog_dmn.errors import DimensionError, InputError
from scene_dialog_dmn.parameters import ParameterStore
from scene_dialog_dmn.tensor import (
    Tensor,
    concat,
    embedding_lookup,
    lstm_gates,
    matmul,
    stack,
    transpose,
)
from scene_dialog_dmn.vocab import UNK_ID

Modality = Literal["visual", "audio"]


@dataclass
class EmbeddingTable:
    weights: Tensor

    @classmethod
    def create(cls, store: ParameterStore, name: str, vocab_size: int, dim: int) -> "EmbeddingTable":
        return cls(store.uniform(name, (vocab_size, dim), dim))

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def clamp_ids(self, token_ids: Sequence[int]) -> list[int]:
        return [int(t) if 0 <= int(t) < self.vocab_size else UNK_ID for t in token_ids]

    def lookup(self, token_ids: Sequence[int]) -> Tensor:
        return embedding_lookup(self.weights, self.clamp_ids(token_ids))


@dataclass
class LSTMParams:
    """Fused gate weights, gate order i, f, g, o."""

    W: Tensor  # (4h, d_in)
    U: Tensor  # (4h, h)
    b: Tensor  # (4h,)

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, d_in: int, d_h: int) -> "LSTMParams":
        return cls(
            W=store.uniform(f"{prefix}.W", (4 * d_h, d_in), d_h),
            U=store.uniform(f"{prefix}.U", (4 * d_h, d_h), d_h),
            b=store.uniform(f"{prefix}.b", (4 * d_h,), d_h),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def zero_state(self) -> tuple[Tensor, Tensor]:
        return Tensor(np.zeros(self.hidden)), Tensor(np.zeros(self.hidden))


@dataclass
class QuestionEncoderParams:
    forward: LSTMParams
    backward: LSTMParams


@dataclass(frozen=True)
class QuestionEmbedding:
    q: Tensor

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class InputFacts:
    modality: Modality
    facts: Tensor  # (N, h)

    @property
    def N(self) -> int:
        return self.facts.shape[0]

    @property
    def dim(self) -> int:
        return self.facts.shape[1]


def _lstm_step(x_proj: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> tuple[Tensor, Tensor]:
    H = params.hidden
    out = lstm_gates(x_proj + matmul(params.U, h) + params.b, c)
    return out[0:H], out[H : 2 * H]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> tuple[Tensor, Tensor]:
    if x.shape != (params.input_dim,):
        raise DimensionError(f"lstm_cell: input {x.shape} does not match W {params.W.shape}")
    if h.shape != (params.hidden,) or c.shape != (params.hidden,):
        raise DimensionError(
            f"lstm_cell: state shapes {h.shape}/{c.shape} do not match hidden {params.hidden}"
        )
    return _lstm_step(matmul(params.W, x), h, c, params)


def run_lstm(
    inputs: Tensor,
    params: LSTMParams,
    *,
    reverse: bool = False,
) -> tuple[list[Tensor], Tensor, Tensor]:
    """Run over the rows of `inputs`; returns per-step hidden states in input order and the final (h, c)."""
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise DimensionError(f"run_lstm: inputs {inputs.shape} do not match W {params.W.shape}")
    projected = matmul(inputs, transpose(params.W))
    h, c = params.zero_state()
    steps = range(inputs.shape[0] - 1, -1, -1) if reverse else range(inputs.shape[0])
    states: list[Tensor] = [h] * inputs.shape[0]
    for t in steps:
        h, c = _lstm_step(projected[t], h, c, params)
        states[t] = h
    return states, h, c


def encode_question(
    token_ids: Sequence[int],
    table: EmbeddingTable,
    params: QuestionEncoderParams,
) -> QuestionEmbedding:
    if not token_ids:
        raise InputError("encode_question: question has no tokens")
    embedded = table.lookup(token_ids)
    _, _, c_fwd = run_lstm(embedded, params.forward)
    _, _, c_bwd = run_lstm(embedded, params.backward, reverse=True)
    return QuestionEmbedding(q=concat([c_fwd, c_bwd]))


def encode_facts(
    features: Tensor | np.ndarray,
    params: LSTMParams,
    modality: Modality = "visual",
) -> InputFacts:
    if features.ndim != 2:
        raise InputError(f"encode_facts: features must be (N, D), got {features.shape}")
    if features.shape[0] == 0:
        raise InputError(f"encode_facts: {modality} stream has no segments")
    if not isinstance(features, Tensor):
        features = Tensor(features)
    states, _, _ = run_lstm(features, params)
    return InputFacts(modality=modality, facts=stack(states))


def encode_text_states(
    token_ids: Sequence[int],
    table: EmbeddingTable,
    params: LSTMParams,
) -> Tensor:
    if not token_ids:
        return Tensor(np.zeros((1, params.hidden)))
    states, _, _ = run_lstm(table.lookup(token_ids), params)
    return stack(states)
