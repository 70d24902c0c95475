from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scene_dialog_dmn.encoders import InputFacts
from scene_dialog_dmn.errors import ConfigurationError, ContractError, DimensionError
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import (
    Tensor,
    concat,
    gated_blend,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    tanh,
    tile_rows,
    transpose,
)


@dataclass
class GateParams:
    hidden_map: Affine  # W(1), b(1): 2h -> h
    score: Affine  # W(2), b(2): h -> 1

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, hidden: int) -> "GateParams":
        # scores start at zero so every episode begins from uniform gates
        return cls(
            hidden_map=Affine.create(store, f"{prefix}.hidden_map", 2 * hidden, hidden, hidden),
            score=Affine(store.zeros(f"{prefix}.score.W", (1, hidden)), store.zeros(f"{prefix}.score.b", (1,))),
        )


@dataclass
class AttentionGRUParams:
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W: Tensor
    U: Tensor
    b: Tensor

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, hidden: int) -> "AttentionGRUParams":
        return cls(
            W_r=store.uniform(f"{prefix}.W_r", (hidden, hidden), hidden),
            U_r=store.uniform(f"{prefix}.U_r", (hidden, hidden), hidden),
            b_r=store.uniform(f"{prefix}.b_r", (hidden,), hidden),
            W=store.uniform(f"{prefix}.W", (hidden, hidden), hidden),
            U=store.uniform(f"{prefix}.U", (hidden, hidden), hidden),
            b=store.uniform(f"{prefix}.b", (hidden,), hidden),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]


@dataclass
class EpisodicParams:
    """
    One modality's memory network. Gate and attention-GRU weights are shared by
    all episodes; each episode has its own memory update.
    """

    init: Affine  # m_0 = init(q)
    gate: GateParams
    gru: AttentionGRUParams
    memory: list[Affine]  # per episode: 3h -> h

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, hidden: int, episodes: int) -> "EpisodicParams":
        if episodes < 1:
            raise ConfigurationError(f"episodes must be at least 1, got {episodes}")
        return cls(
            init=Affine.create(store, f"{prefix}.init", hidden, hidden, hidden),
            gate=GateParams.create(store, f"{prefix}.gate", hidden),
            gru=AttentionGRUParams.create(store, f"{prefix}.gru", hidden),
            memory=[
                Affine.create(store, f"{prefix}.memory{t}", 3 * hidden, hidden, hidden)
                for t in range(1, episodes + 1)
            ],
        )

    @property
    def episodes(self) -> int:
        return len(self.memory)


@dataclass(frozen=True)
class AttentionGates:
    episode: int
    g: Tensor  # (N,)


@dataclass
class EpisodicState:
    memory: Tensor
    M: int
    gates_history: list[AttentionGates] = field(default_factory=list)


def compute_gates(
    facts: InputFacts,
    q: Tensor,
    m_prev: Tensor,
    params: GateParams,
    *,
    episode: int = 1,
) -> AttentionGates:
    h = facts.dim
    if q.shape != (h,) or m_prev.shape != (h,):
        raise DimensionError(
            f"compute_gates: facts {facts.facts.shape}, question {q.shape}, memory {m_prev.shape}"
        )
    F = facts.facts
    N = facts.N
    z = concat([F * tile_rows(q, N), F * tile_rows(m_prev, N)], axis=1)
    Z = params.score.rows(tanh(params.hidden_map.rows(z)))
    return AttentionGates(episode=episode, g=softmax(reshape(Z, (N,))))


def _check_gate(g: Tensor) -> None:
    value = g.item()
    if not 0.0 <= value <= 1.0:
        raise ContractError(f"Attention gate must lie in [0, 1], got {value!r}")


def _blend(x_r: Tensor, x_w: Tensor, h_prev: Tensor, g: Tensor, params: AttentionGRUParams) -> Tensor:
    r = sigmoid(x_r + matmul(params.U_r, h_prev) + params.b_r)
    candidate = tanh(x_w + matmul(params.U, r * h_prev) + params.b)
    return gated_blend(candidate, h_prev, g)


def attention_gru_step(
    f_i: Tensor,
    h_prev: Tensor,
    g_i: Tensor | float,
    params: AttentionGRUParams,
) -> Tensor:
    """GRU step whose update gate is replaced by the scalar attention gate g_i."""
    gate = g_i if isinstance(g_i, Tensor) else Tensor(float(g_i))
    _check_gate(gate)
    if f_i.shape != (params.W_r.shape[1],) or h_prev.shape != (params.hidden,):
        raise DimensionError(f"attention_gru_step: fact {f_i.shape}, state {h_prev.shape}")
    return _blend(matmul(params.W_r, f_i), matmul(params.W, f_i), h_prev, gate, params)


def run_episode(
    facts: InputFacts,
    q: Tensor,
    m_prev: Tensor,
    params: EpisodicParams,
    *,
    episode: int = 1,
) -> tuple[Tensor, AttentionGates]:
    """Traverse the facts once; returns c = [q ; h ; m_prev] and this episode's gates."""
    gates = compute_gates(facts, q, m_prev, params.gate, episode=episode)
    F = facts.facts
    gru = params.gru
    x_r = matmul(F, transpose(gru.W_r))
    x_w = matmul(F, transpose(gru.W))
    h = Tensor(np.zeros(gru.hidden))
    for i in range(facts.N):
        g_i = gates.g[i]
        _check_gate(g_i)
        h = _blend(x_r[i], x_w[i], h, g_i, gru)
    return concat([q, h, m_prev]), gates


def update_memory(c: Tensor, params: Affine) -> Tensor:
    if c.shape != (params.d_in,):
        raise DimensionError(f"update_memory: c has shape {c.shape}, expected ({params.d_in},)")
    return relu(params(c))


def run_dmn(
    facts: InputFacts,
    q: Tensor,
    M: int,
    params: EpisodicParams,
) -> tuple[Tensor, list[AttentionGates]]:
    if M < 1:
        raise ConfigurationError(f"Episode count M must be at least 1, got {M}")
    if M > params.episodes:
        raise ConfigurationError(f"Model was built for {params.episodes} episodes, asked for {M}")
    state = EpisodicState(memory=params.init(q), M=M)
    for t in range(1, M + 1):
        c, gates = run_episode(facts, q, state.memory, params, episode=t)
        state.memory = update_memory(c, params.memory[t - 1])
        state.gates_history.append(gates)
    return state.memory, list(state.gates_history)
