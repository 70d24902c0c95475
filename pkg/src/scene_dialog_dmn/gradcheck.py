from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from scene_dialog_dmn.attention import TextAttentionParams, text_attend
from scene_dialog_dmn.config import TrainConfig
from scene_dialog_dmn.decoder import ChainState, DecoderParams, decode_teacher_forced
from scene_dialog_dmn.encoders import EmbeddingTable, InputFacts, LSTMParams, lstm_cell
from scene_dialog_dmn.episodic import EpisodicParams, run_dmn
from scene_dialog_dmn.errors import ContractError, InputError
from scene_dialog_dmn.fusion import QuestionGateParams, fuse, fuse_question_gated
from scene_dialog_dmn.model import PreparedDialogue, SceneDialogModel
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import Tensor, boundary_monitor, dot, no_grad, sum as tensor_sum, tanh
from scene_dialog_dmn.training import dialogue_loss, loss
from scene_dialog_dmn.vocab import BOS_ID, EOS_ID, RESERVED

logger = logging.getLogger("scene_dialog_dmn")

FD_STEP = 1e-6
# Coordinates whose gradients are both smaller than this are compared on an
# absolute scale; below it central differences are dominated by rounding.
SCALE_FLOOR = 1e-3
SELECTORS: tuple[str, ...] = ("affine", "lstm", "attention", "dmn", "fusion", "decoder", "pipeline")

# Small-instance sizes for the full pipeline.
PIPELINE_HIDDEN = 8
PIPELINE_SEGMENTS = 4
PIPELINE_TEXT_LEN = 3
PIPELINE_VOCAB = 12


@dataclass
class GradInstance:
    objective: Callable[[], Tensor]
    blocks: list[tuple[str, Tensor]]


@dataclass(frozen=True)
class BlockResult:
    name: str
    max_rel_error: float
    checked: int
    boundary: bool = False

    def passed(self, tolerance: float) -> bool:
        return self.boundary or self.max_rel_error < tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "max_rel_error": self.max_rel_error,
            "checked": self.checked,
            "boundary": self.boundary,
        }


@dataclass
class GradcheckReport:
    tolerance: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(block.passed(self.tolerance) for block in self.blocks)

    @property
    def max_rel_error(self) -> float:
        checked = [block.max_rel_error for block in self.blocks if not block.boundary]
        return max(checked) if checked else 0.0

    @property
    def boundary_blocks(self) -> list[str]:
        return [block.name for block in self.blocks if block.boundary]

    def to_dict(self) -> dict[str, Any]:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "boundary_blocks": self.boundary_blocks,
            "blocks": [block.to_dict() for block in self.blocks],
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest per-coordinate |a - n| / max(|a|, |n|, SCALE_FLOOR)."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), SCALE_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _coordinates(grad: np.ndarray, max_coords: int | None, rng: np.random.Generator) -> np.ndarray:
    size = grad.size
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    largest = int(np.argmax(np.abs(grad.reshape(-1))))
    others = rng.choice(size, size=max_coords - 1, replace=False)
    return np.unique(np.concatenate([[largest], others]))


def check_instance(
    instance: GradInstance,
    *,
    rng: np.random.Generator,
    max_coords: int | None = None,
    prefix: str = "",
) -> list[BlockResult]:
    """Compare tape gradients of every block against central differences."""
    for _, tensor in instance.blocks:
        tensor.requires_grad = True
        tensor.grad = None
    instance.objective().backward()
    analytic = {
        name: (tensor.grad.copy() if tensor.grad is not None else np.zeros(tensor.shape))
        for name, tensor in instance.blocks
    }

    results: list[BlockResult] = []
    for name, tensor in instance.blocks:
        grad = analytic[name]
        coords = _coordinates(grad, max_coords, rng)
        flat = tensor.data.reshape(-1)
        numeric = np.empty(len(coords))
        hits = 0
        for k, idx in enumerate(coords):
            original = flat[idx]
            with no_grad(), boundary_monitor() as counter:
                flat[idx] = original + FD_STEP
                plus = instance.objective().item()
                flat[idx] = original - FD_STEP
                minus = instance.objective().item()
            flat[idx] = original
            hits += counter.boundary_hits
            numeric[k] = (plus - minus) / (2.0 * FD_STEP)
        error = relative_error(grad.reshape(-1)[coords], numeric)
        results.append(BlockResult(f"{prefix}{name}", error, len(coords), boundary=hits > 0))
    return results


def _store_blocks(store: ParameterStore) -> list[tuple[str, Tensor]]:
    return store.items()


def _fill_zero_blocks(store: ParameterStore, rng: np.random.Generator) -> None:
    """Zero-initialized blocks get random values so gradients flow through them."""
    for _, tensor in store.items():
        if not np.any(tensor.data):
            tensor.data = rng.uniform(-0.5, 0.5, size=tensor.shape)


def _input(rng: np.random.Generator, *shape: int, name: str) -> Tensor:
    return Tensor(rng.normal(0.0, 0.5, size=shape), requires_grad=True, name=name)


def _affine_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    store = ParameterStore(seed)
    layer = Affine.create(store, "affine", 5, 4, 5)
    x = _input(rng, 5, name="x")
    readout = Tensor(rng.normal(size=4))
    return GradInstance(lambda: dot(layer(x), readout), _store_blocks(store) + [("x", x)])


def _lstm_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    store = ParameterStore(seed)
    params = LSTMParams.create(store, "lstm", 5, 6)
    x = _input(rng, 5, name="x")
    h = _input(rng, 6, name="h")
    c = _input(rng, 6, name="c")
    readout = Tensor(rng.normal(size=6))

    def objective() -> Tensor:
        h_next, c_next = lstm_cell(x, h, c, params)
        return tensor_sum(h_next) + dot(c_next, readout)

    return GradInstance(objective, _store_blocks(store) + [("x", x), ("h", h), ("c", c)])


def _attention_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    hidden = PIPELINE_HIDDEN
    store = ParameterStore(seed)
    params = TextAttentionParams.create(store, "attention", hidden)
    states = _input(rng, PIPELINE_TEXT_LEN, hidden, name="states")
    q = _input(rng, hidden, name="q")
    readout = Tensor(rng.normal(size=hidden))
    return GradInstance(
        lambda: dot(text_attend(states, q, params).context, readout),
        _store_blocks(store) + [("states", states), ("q", q)],
    )


def _dmn_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    hidden = PIPELINE_HIDDEN
    store = ParameterStore(seed)
    params = EpisodicParams.create(store, "dmn", hidden, 2)
    _fill_zero_blocks(store, rng)
    facts = _input(rng, PIPELINE_SEGMENTS, hidden, name="facts")
    q = _input(rng, hidden, name="q")

    def objective() -> Tensor:
        memory, _ = run_dmn(InputFacts("visual", facts), q, 2, params)
        return tensor_sum(memory)

    return GradInstance(objective, _store_blocks(store) + [("facts", facts), ("q", q)])


def _fusion_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    hidden = PIPELINE_HIDDEN
    store = ParameterStore(seed)
    gate = QuestionGateParams.create(store, "fusion", hidden)
    contexts = [_input(rng, hidden, name=f"context{j}") for j in range(4)]
    q = _input(rng, hidden, name="q")
    readout = Tensor(rng.normal(size=hidden))

    def objective() -> Tensor:
        literal = fuse(contexts).v
        gated = fuse_question_gated(contexts, q, gate).v
        return dot(tanh(literal), readout) + dot(gated, readout)

    blocks = _store_blocks(store) + [(f"context{j}", c) for j, c in enumerate(contexts)] + [("q", q)]
    return GradInstance(objective, blocks)


def _decoder_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    hidden = PIPELINE_HIDDEN
    store = ParameterStore(seed)
    table = EmbeddingTable.create(store, "embedding", PIPELINE_VOCAB, hidden)
    params = DecoderParams.create(store, "decoder", hidden, table)
    v = _input(rng, hidden, name="v")
    s_prev = _input(rng, hidden, name="s_prev")
    body = [int(t) for t in rng.integers(len(RESERVED), PIPELINE_VOCAB, size=3)]
    target = [BOS_ID, *body, EOS_ID]

    def objective() -> Tensor:
        logits, _ = decode_teacher_forced(ChainState(s_prev, 2), v, target, params)
        return loss(logits, target[1:], [], 0.0).objective

    return GradInstance(objective, _store_blocks(store) + [("v", v), ("s_prev", s_prev)])


def tiny_dialogue(rng: np.random.Generator, *, visual_dim: int = 5, audio_dim: int = 3) -> PreparedDialogue:
    """Two-question dialogue over a vocabulary of PIPELINE_VOCAB ids."""

    def ids(n: int) -> list[int]:
        return [int(t) for t in rng.integers(len(RESERVED), PIPELINE_VOCAB, size=n)]

    questions = [ids(3), ids(2)]
    answers = [ids(2), ids(1)]
    return PreparedDialogue(
        id="gradcheck",
        caption_ids=ids(PIPELINE_TEXT_LEN),
        summary_ids=ids(PIPELINE_TEXT_LEN),
        visual=rng.normal(0.0, 0.5, size=(PIPELINE_SEGMENTS, visual_dim)),
        audio=rng.normal(0.0, 0.5, size=(PIPELINE_SEGMENTS, audio_dim)),
        questions=[[str(t) for t in q] for q in questions],
        question_ids=questions,
        answers=[[str(t) for t in a] for a in answers],
        answer_ids=[[BOS_ID, *a, EOS_ID] for a in answers],
        tags=[None, None],
    )


def _pipeline_instance(rng: np.random.Generator, seed: int) -> GradInstance:
    config = TrainConfig(hidden=PIPELINE_HIDDEN, episodes=2, gamma=0.1, seed=seed)
    model = SceneDialogModel(config, PIPELINE_VOCAB, 5, 3)
    _fill_zero_blocks(model.store, rng)
    dialogue = tiny_dialogue(rng)

    def objective() -> Tensor:
        value, _ = dialogue_loss(model.forward_dialogue(dialogue), config.gamma)
        return value

    return GradInstance(objective, _store_blocks(model.store))


_BUILDERS: dict[str, Callable[[np.random.Generator, int], GradInstance]] = {
    "affine": _affine_instance,
    "lstm": _lstm_instance,
    "attention": _attention_instance,
    "dmn": _dmn_instance,
    "fusion": _fusion_instance,
    "decoder": _decoder_instance,
    "pipeline": _pipeline_instance,
}


def build_instance(selector: str, seed: int, *, zero_params: bool = False) -> GradInstance:
    if selector not in _BUILDERS:
        raise InputError(f"Unknown gradcheck selector {selector!r}; choose from {', '.join(SELECTORS)}")
    instance = _BUILDERS[selector](np.random.default_rng(seed), seed)
    if zero_params:
        for _, tensor in instance.blocks:
            tensor.data[...] = 0.0
    return instance


def gradcheck(
    selectors: Sequence[str] = SELECTORS,
    trials: int = 1,
    tolerance: float = 1e-5,
    *,
    seed: int = 0,
    max_coords: int | None = None,
    zero_params: bool = False,
) -> GradcheckReport:
    """
    Random small instances of each selected sub-network, one per trial seed.

    A block that put a relu input within 1e-6 of its kink is flagged as a
    boundary block instead of failing.
    """
    if tolerance <= 0:
        raise ContractError(f"gradcheck tolerance must be positive, got {tolerance}")
    if trials < 1:
        raise ContractError(f"gradcheck needs at least one trial, got {trials}")
    report = GradcheckReport(tolerance=tolerance)
    for selector in selectors:
        for trial in range(trials):
            trial_seed = seed + trial
            instance = build_instance(selector, trial_seed, zero_params=zero_params)
            results = check_instance(
                instance,
                rng=np.random.default_rng(trial_seed + 10_000),
                max_coords=max_coords,
                prefix=f"{selector}[{trial_seed}].",
            )
            report.blocks.extend(results)
            worst = max(results, key=lambda block: block.max_rel_error)
            logger.debug("gradcheck %s seed=%d worst=%s %.3e", selector, trial_seed, worst.name, worst.max_rel_error)
    return report
