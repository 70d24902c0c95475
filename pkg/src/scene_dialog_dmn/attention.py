from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from scene_dialog_dmn.errors import DimensionError
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import Tensor, matmul, reshape, softmax, tanh, tile_rows

TextSource = Literal["caption", "summary"]


@dataclass
class TextAttentionParams:
    key: Affine  # W1, b1 over token states
    query: Affine  # W2, b2 over the question
    w: Tensor  # (h,)
    b: Tensor  # (1,)

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, hidden: int) -> "TextAttentionParams":
        return cls(
            key=Affine.create(store, f"{prefix}.key", hidden, hidden, hidden),
            query=Affine.create(store, f"{prefix}.query", hidden, hidden, hidden),
            w=store.uniform(f"{prefix}.w", (hidden,), hidden),
            b=store.uniform(f"{prefix}.b", (1,), hidden),
        )


@dataclass(frozen=True)
class TextContext:
    source: TextSource
    alpha: Tensor  # (L,)
    context: Tensor  # (h,)


def text_attend(
    text_states: Tensor,
    q: Tensor,
    params: TextAttentionParams,
    source: TextSource = "caption",
) -> TextContext:
    """Additive attention: e_j = w . tanh(W1 t_j + b1 + W2 q + b2) + b, alpha = softmax(e)."""
    if text_states.ndim != 2:
        raise DimensionError(f"text_attend: states must be (L, h), got {text_states.shape}")
    if q.shape != (text_states.shape[1],):
        raise DimensionError(f"text_attend: states {text_states.shape} vs question {q.shape}")
    L = text_states.shape[0]
    keys = params.key.rows(text_states)
    query = tile_rows(params.query(q), L)
    scores = matmul(tanh(keys + query), params.w) + reshape(tile_rows(params.b, L), (L,))
    alpha = softmax(scores)
    return TextContext(source=source, alpha=alpha, context=matmul(alpha, text_states))
