from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

from scene_dialog_dmn.errors import DimensionError, InputError
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import (
    Tensor,
    concat,
    matmul,
    softmax,
    stack,
    sum as tensor_sum,
    tanh,
    tile_rows,
    transpose,
)

FusionMode = Literal["literal", "question-gated"]


@dataclass(frozen=True)
class FusionResult:
    beta: Tensor  # (m, h); every column sums to 1
    v: Tensor  # (h,)


@dataclass
class QuestionGateParams:
    proj: Affine  # [C_j ; q] (2h) -> h
    w: Tensor  # (h,)

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, hidden: int) -> "QuestionGateParams":
        return cls(
            proj=Affine.create(store, f"{prefix}.proj", 2 * hidden, hidden, hidden),
            w=store.uniform(f"{prefix}.w", (hidden,), hidden),
        )


def _stack_contexts(contexts: Sequence[Tensor]) -> Tensor:
    if not contexts:
        raise InputError("fuse: no modality contexts given")
    first = contexts[0].shape
    if len(first) != 1:
        raise DimensionError(f"fuse: contexts must be vectors, got {first}")
    for context in contexts[1:]:
        if context.shape != first:
            raise DimensionError(f"fuse: context shapes differ, {first} vs {context.shape}")
    return stack(list(contexts))


def fuse(contexts: Sequence[Tensor]) -> FusionResult:
    """beta[j, k] = softmax over modalities j of C[j, k]; v[k] = sum_j beta[j, k] C[j, k]."""
    C = _stack_contexts(contexts)
    beta = softmax(C, axis=0)
    return FusionResult(beta=beta, v=tensor_sum(beta * C, axis=0))


def fuse_question_gated(contexts: Sequence[Tensor], q: Tensor, params: QuestionGateParams) -> FusionResult:
    """One weight per modality: score_j = w . tanh(W [C_j ; q] + b), softmax over j."""
    C = _stack_contexts(contexts)
    m, h = C.shape
    if q.shape != (h,):
        raise DimensionError(f"fuse: question {q.shape} does not match contexts of width {h}")
    scores = matmul(tanh(params.proj.rows(concat([C, tile_rows(q, m)], axis=1))), params.w)
    weights = softmax(scores)
    return FusionResult(beta=transpose(tile_rows(weights, h)), v=matmul(weights, C))


def fuse_contexts(
    contexts: Sequence[Tensor],
    q: Tensor,
    mode: FusionMode,
    params: QuestionGateParams | None = None,
) -> FusionResult:
    if mode == "literal":
        return fuse(contexts)
    if params is None:
        raise InputError("question-gated fusion needs its gate parameters")
    return fuse_question_gated(contexts, q, params)
