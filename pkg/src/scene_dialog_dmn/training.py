from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from scene_dialog_dmn.config import TrainConfig
from scene_dialog_dmn.episodic import AttentionGates
from scene_dialog_dmn.errors import ContractError, DimensionError, InputError, TrainingDiverged
from scene_dialog_dmn.evaluation import ENTROPY_FLOOR, teacher_forced_metrics
from scene_dialog_dmn.features import FeatureStore
from scene_dialog_dmn.model import PreparedDialogue, QuestionOutput, SceneDialogModel, prepare_dialogue, save_run
from scene_dialog_dmn.models import DialogueExample
from scene_dialog_dmn.parameters import ParameterStore
from scene_dialog_dmn.tensor import Tensor, log, log_softmax, scalar_mul, sum as tensor_sum
from scene_dialog_dmn.vocab import Vocabulary, build_vocab, load_embeddings

logger = logging.getLogger("scene_dialog_dmn")

METRICS_FILE = "metrics.jsonl"
GATE_SUM_TOLERANCE = 1e-9

GateHistories = Mapping[str, Sequence[AttentionGates]] | Sequence[Sequence[AttentionGates]]


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    entropy_penalty: float  # sum of gate entropies, before gamma
    gamma: float
    total: float
    objective: Tensor

    def to_dict(self) -> dict[str, float]:
        return {"ce": self.ce, "entropy": self.entropy_penalty, "gamma": self.gamma, "total": self.total}


def gate_entropy(g: Tensor) -> Tensor:
    """H(g) = -sum_i g_i log(g_i + 1e-12)."""
    return scalar_mul(tensor_sum(g * log(g + ENTROPY_FLOOR)), -1.0)


def _flatten_gates(gates_histories: GateHistories) -> list[AttentionGates]:
    groups = gates_histories.values() if isinstance(gates_histories, Mapping) else gates_histories
    return [entry for history in groups for entry in history]


def _check_distribution(entry: AttentionGates) -> None:
    total = float(np.sum(entry.g.data))
    if abs(total - 1.0) > GATE_SUM_TOLERANCE or np.any(entry.g.data < 0.0):
        raise ContractError(
            f"Gate vector of episode {entry.episode} is not a distribution (sums to {total!r})"
        )


def loss(
    step_logits: Tensor,
    target_tokens: Sequence[int],
    gates_histories: GateHistories,
    gamma: float,
) -> LossBreakdown:
    """Token-mean cross-entropy plus gamma times the summed entropy of every DMN gate vector."""
    targets = [int(t) for t in target_tokens]
    if step_logits.ndim != 2 or step_logits.shape[0] != len(targets):
        raise DimensionError(
            f"loss: {len(targets)} target tokens but logits of shape {step_logits.shape}"
        )
    vocab_size = step_logits.shape[1]
    if any(not 0 <= t < vocab_size for t in targets):
        raise InputError(f"loss: target token outside vocabulary of {vocab_size}")
    one_hot = np.zeros(step_logits.shape)
    one_hot[np.arange(len(targets)), targets] = 1.0
    ce = scalar_mul(tensor_sum(log_softmax(step_logits, axis=1) * Tensor(one_hot)), -1.0 / len(targets))

    entries = _flatten_gates(gates_histories)
    entropy: Tensor | None = None
    for entry in entries:
        _check_distribution(entry)
        term = gate_entropy(entry.g)
        entropy = term if entropy is None else entropy + term
    if entropy is None:
        objective = ce
        entropy_value = 0.0
    else:
        objective = ce + scalar_mul(entropy, gamma)
        entropy_value = entropy.item()
    return LossBreakdown(
        ce=ce.item(),
        entropy_penalty=entropy_value,
        gamma=gamma,
        total=objective.item(),
        objective=objective,
    )


def dialogue_loss(outputs: Sequence[QuestionOutput], gamma: float) -> tuple[Tensor, list[LossBreakdown]]:
    """Mean of the per-question losses; every QA pair is a training target."""
    if not outputs:
        raise InputError("dialogue_loss: no questions")
    parts = [loss(output.logits, output.targets, output.gates, gamma) for output in outputs]
    objective = parts[0].objective
    for part in parts[1:]:
        objective = objective + part.objective
    return scalar_mul(objective, 1.0 / len(parts)), parts


def training_targets(dialogues: Sequence[DialogueExample]) -> int:
    return sum(len(dialogue.qa_pairs) for dialogue in dialogues)


class Adam:
    """Adam with bias correction. A learning rate of 0 leaves parameters untouched."""

    def __init__(
        self,
        params: ParameterStore,
        *,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros(tensor.shape) for name, tensor in params.items()}
        self._v = {name: np.zeros(tensor.shape) for name, tensor in params.items()}

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            g = tensor.grad
            m = self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            if self.learning_rate == 0.0:
                continue
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            tensor.data = tensor.data - self.learning_rate * update


def clip_grad_norm(params: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients together so their global L2 norm is at most `max_norm`."""
    squares = 0.0
    for _, tensor in params.items():
        if tensor.grad is not None:
            squares += float(np.sum(tensor.grad * tensor.grad))
    norm = math.sqrt(squares)
    if norm > max_norm:
        factor = max_norm / norm
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return norm


def split_dialogues(
    dialogues: Sequence[DialogueExample],
    val_fraction: float,
    seed: int,
) -> tuple[list[DialogueExample], list[DialogueExample]]:
    """Seeded shuffle, then the last `val_fraction` becomes the held-out set."""
    n = len(dialogues)
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(int(round(n * val_fraction)), max(n - 1, 0))
    cut = n - n_val
    return [dialogues[i] for i in order[:cut]], [dialogues[i] for i in order[cut:]]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    ce: float
    entropy: float
    total: float
    val_token_acc: float | None
    gate_entropy: float | None
    followup_acc: float | None
    wall_ms: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "ce": self.ce,
            "entropy": self.entropy,
            "total": self.total,
            "val_token_acc": self.val_token_acc,
            "gate_entropy": self.gate_entropy,
            "followup_acc": self.followup_acc,
            "wall_ms": self.wall_ms,
        }


@dataclass
class TrainResult:
    model: SceneDialogModel
    vocab: Vocabulary
    metrics: list[EpochMetrics]
    train_set: list[PreparedDialogue]
    val_set: list[PreparedDialogue]
    run_dir: Path | None = None


def _append_metrics(path: Path, payload: dict[str, Any]) -> None:
    with path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(payload, sort_keys=True) + "\n")


def train(
    dialogues: Sequence[DialogueExample],
    config: TrainConfig,
    *,
    val_dialogues: Sequence[DialogueExample] | None = None,
    vocab: Vocabulary | None = None,
    run_dir: str | Path | None = None,
    features: FeatureStore | None = None,
) -> TrainResult:
    config.validate()
    if not dialogues:
        raise InputError("train: dataset is empty")
    if val_dialogues is None:
        train_part, val_part = split_dialogues(dialogues, config.val_fraction, config.seed)
    else:
        train_part, val_part = list(dialogues), list(val_dialogues)
    if not train_part:
        raise InputError("train: no dialogues left for training after the validation split")

    vocab = vocab if vocab is not None else build_vocab(train_part, config.min_count)
    store = features if features is not None else FeatureStore()
    train_set = [prepare_dialogue(d, vocab, store) for d in train_part]
    val_set = [prepare_dialogue(d, vocab, store) for d in val_part]

    first = train_set[0]
    model = SceneDialogModel(config, len(vocab), first.visual.shape[1], first.audio.shape[1])
    if config.embeddings_path:
        _, coverage = load_embeddings(config.embeddings_path, vocab, config.word_dim, table=model.embedding)
        logger.info("Pretrained embeddings cover %.1f%% of the vocabulary", 100.0 * coverage)

    optimizer = Adam(
        model.store,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
    )
    rng = np.random.default_rng(config.seed)

    target_dir = Path(run_dir) if run_dir is not None else None
    metrics_path: Path | None = None
    if target_dir is not None:
        target_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = target_dir / METRICS_FILE
        metrics_path.write_text("", encoding="utf-8")

    logger.info(
        "Training on %d dialogues (%d targets), %d held out, %d parameters, optimizer=adam lr=%g",
        len(train_set),
        training_targets(train_part),
        len(val_set),
        model.store.num_values(),
        config.learning_rate,
    )

    history: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_set))
        sums = {"ce": 0.0, "entropy": 0.0, "total": 0.0}
        questions = 0
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start : batch_start + config.batch_size]
            model.store.zero_grad()
            for index in batch:
                dialogue = train_set[int(index)]
                objective, parts = dialogue_loss(model.forward_dialogue(dialogue), config.gamma)
                value = objective.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(dialogue.id, value)
                scalar_mul(objective, 1.0 / len(batch)).backward()
                for part in parts:
                    sums["ce"] += part.ce
                    sums["entropy"] += part.entropy_penalty
                    sums["total"] += part.total
                questions += len(parts)
            norm = clip_grad_norm(model.store, config.clip_norm)
            optimizer.step()
            logger.debug("epoch %d batch %d grad_norm=%.4f", epoch, batch_start // config.batch_size, norm)

        report = teacher_forced_metrics(model, val_set) if val_set else None
        metrics = EpochMetrics(
            epoch=epoch,
            ce=sums["ce"] / questions,
            entropy=sums["entropy"] / questions,
            total=sums["total"] / questions,
            val_token_acc=report.token_acc if report else None,
            gate_entropy=report.gate_entropy if report else None,
            followup_acc=report.followup_acc if report else None,
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )
        history.append(metrics)
        if metrics_path is not None:
            _append_metrics(metrics_path, metrics.to_dict())
        logger.info(
            "epoch %d total=%.4f ce=%.4f entropy=%.4f val_acc=%s (%.0f ms)",
            epoch,
            metrics.total,
            metrics.ce,
            metrics.entropy,
            "n/a" if metrics.val_token_acc is None else f"{metrics.val_token_acc:.3f}",
            metrics.wall_ms,
        )

    if target_dir is not None:
        save_run(target_dir, model, vocab)
    model.store.zero_grad()
    return TrainResult(
        model=model,
        vocab=vocab,
        metrics=history,
        train_set=train_set,
        val_set=val_set,
        run_dir=target_dir,
    )
