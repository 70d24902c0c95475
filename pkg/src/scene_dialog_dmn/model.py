from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from scene_dialog_dmn.attention import TextAttentionParams, text_attend
from scene_dialog_dmn.checkpoint import load_checkpoint, save_checkpoint
from scene_dialog_dmn.config import MODALITIES, TrainConfig, apply_overrides, load_config_file, write_config
from scene_dialog_dmn.decoder import (
    ChainState,
    DecoderParams,
    DecoderState,
    Hypothesis,
    beam_search,
    decode_teacher_forced,
)
from scene_dialog_dmn.encoders import (
    EmbeddingTable,
    InputFacts,
    LSTMParams,
    QuestionEncoderParams,
    encode_facts,
    encode_question,
    encode_text_states,
)
from scene_dialog_dmn.episodic import AttentionGates, EpisodicParams, run_dmn
from scene_dialog_dmn.errors import ConfigurationError, DimensionError, InputError
from scene_dialog_dmn.features import FeatureStore
from scene_dialog_dmn.fusion import FusionResult, QuestionGateParams, fuse_contexts
from scene_dialog_dmn.models import DialogueExample, QuestionAttention
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import Tensor, no_grad
from scene_dialog_dmn.vocab import BOS_ID, EOS_ID, Vocabulary

logger = logging.getLogger("scene_dialog_dmn")

CHECKPOINT_FILE = "model.dmnw"
VOCAB_FILE = "vocab.json"
CONFIG_FILE = "config.json"

_TEXT_MODALITIES = ("caption", "summary")


@dataclass(frozen=True)
class PreparedDialogue:
    """A dialogue with its text mapped to ids and its feature files loaded."""

    id: str
    caption_ids: list[int]
    summary_ids: list[int]
    visual: np.ndarray
    audio: np.ndarray
    questions: list[list[str]]
    question_ids: list[list[int]]
    answers: list[list[str]]
    answer_ids: list[list[int]]  # BOS a_1 .. a_K EOS
    tags: list[str | None]

    def __len__(self) -> int:
        return len(self.question_ids)


def prepare_dialogue(
    dialogue: DialogueExample,
    vocab: Vocabulary,
    features: FeatureStore | None = None,
) -> PreparedDialogue:
    store = features if features is not None else FeatureStore()
    return PreparedDialogue(
        id=dialogue.id,
        caption_ids=vocab.encode(dialogue.caption),
        summary_ids=vocab.encode(dialogue.summary),
        visual=store.get(dialogue.visual_features_ref),
        audio=store.get(dialogue.audio_features_ref),
        questions=[list(pair.question) for pair in dialogue.qa_pairs],
        question_ids=[vocab.encode(pair.question) for pair in dialogue.qa_pairs],
        answers=[list(pair.answer) for pair in dialogue.qa_pairs],
        answer_ids=[[BOS_ID, *vocab.encode(pair.answer), EOS_ID] for pair in dialogue.qa_pairs],
        tags=[pair.tag for pair in dialogue.qa_pairs],
    )


@dataclass(frozen=True)
class EncodedScene:
    text_states: dict[str, Tensor]
    facts: dict[str, InputFacts]


@dataclass(frozen=True)
class QuestionContext:
    q: Tensor
    v: Tensor
    fusion: FusionResult
    gates: dict[str, list[AttentionGates]]
    attention: QuestionAttention


@dataclass(frozen=True)
class QuestionOutput:
    logits: Tensor  # (K + 1, vocab)
    targets: list[int]  # gold ids predicted by each logits row
    context: QuestionContext
    final_state: DecoderState
    tag: str | None = None

    @property
    def gates(self) -> dict[str, list[AttentionGates]]:
        return self.context.gates


class SceneDialogModel:
    """
    Parameter registry plus the per-dialogue forward pass.

    Parameters are registered in a fixed order whatever the order of
    `config.modalities`, so the same config and seed build the same weights.
    """

    def __init__(self, config: TrainConfig, vocab_size: int, visual_dim: int, audio_dim: int) -> None:
        config.validate()
        self.config = config
        self.modalities: tuple[str, ...] = tuple(m for m in MODALITIES if m in config.modalities)
        self.visual_dim = visual_dim
        self.audio_dim = audio_dim
        h, e = config.hidden, config.word_dim
        store = ParameterStore(config.seed)
        self.store = store

        self.embedding = EmbeddingTable.create(store, "embedding", vocab_size, e)
        self.question = QuestionEncoderParams(
            forward=LSTMParams.create(store, "question.forward", e, h),
            backward=LSTMParams.create(store, "question.backward", e, h),
        )
        self.question_proj = Affine.create(store, "question.project", 2 * h, h, 2 * h)

        self.text_encoders: dict[str, LSTMParams] = {}
        self.text_attention: dict[str, TextAttentionParams] = {}
        for name in _TEXT_MODALITIES:
            if name in self.modalities:
                self.text_encoders[name] = LSTMParams.create(store, f"{name}.lstm", e, h)
                self.text_attention[name] = TextAttentionParams.create(store, f"{name}.attention", h)

        self.fact_encoders: dict[str, LSTMParams] = {}
        self.memories: dict[str, EpisodicParams] = {}
        for name, dim in (("visual", visual_dim), ("audio", audio_dim)):
            if name in self.modalities:
                if dim < 1:
                    raise ConfigurationError(f"{name} feature dimension must be positive, got {dim}")
                self.fact_encoders[name] = LSTMParams.create(store, f"{name}.lstm", dim, h)
                self.memories[name] = EpisodicParams.create(store, f"{name}.dmn", h, config.episodes)

        self.fusion_gate = (
            QuestionGateParams.create(store, "fusion", h) if config.fusion == "question-gated" else None
        )
        self.decoder = DecoderParams.create(store, "decoder", h, self.embedding)

    @property
    def hidden(self) -> int:
        return self.config.hidden

    @property
    def vocab_size(self) -> int:
        return self.embedding.vocab_size

    def encode_scene(self, dialogue: PreparedDialogue) -> EncodedScene:
        text_states: dict[str, Tensor] = {}
        for name, params in self.text_encoders.items():
            ids = dialogue.caption_ids if name == "caption" else dialogue.summary_ids
            text_states[name] = encode_text_states(ids, self.embedding, params)
        facts: dict[str, InputFacts] = {}
        for name, params in self.fact_encoders.items():
            raw = dialogue.visual if name == "visual" else dialogue.audio
            if raw.ndim != 2 or raw.shape[1] != params.input_dim:
                raise DimensionError(
                    f"dialogue {dialogue.id}: {name} features {raw.shape} do not match model width {params.input_dim}"
                )
            facts[name] = encode_facts(raw, params, name)  # type: ignore[arg-type]
        return EncodedScene(text_states=text_states, facts=facts)

    def answer_context(
        self,
        scene: EncodedScene,
        question_ids: Sequence[int],
        question: Sequence[str] = (),
    ) -> QuestionContext:
        q_raw = encode_question(question_ids, self.embedding, self.question).q
        q = self.question_proj(q_raw)
        record = QuestionAttention(question=list(question))
        contexts: list[Tensor] = []
        gates: dict[str, list[AttentionGates]] = {}
        for name in self.modalities:
            if name in self.memories:
                memory, history = run_dmn(scene.facts[name], q, self.config.episodes, self.memories[name])
                contexts.append(memory)
                gates[name] = history
                rows = [entry.g.data.tolist() for entry in history]
                if name == "visual":
                    record.visual_gates = rows
                else:
                    record.audio_gates = rows
            else:
                attended = text_attend(scene.text_states[name], q, self.text_attention[name], name)  # type: ignore[arg-type]
                contexts.append(attended.context)
                if name == "caption":
                    record.caption_alpha = attended.alpha.data.tolist()
                else:
                    record.summary_alpha = attended.alpha.data.tolist()
        fused = fuse_contexts(contexts, q, self.config.fusion, self.fusion_gate)  # type: ignore[arg-type]
        record.fusion_modalities = list(self.modalities)
        record.fusion_beta = fused.beta.data.tolist()
        return QuestionContext(q=q, v=fused.v, fusion=fused, gates=gates, attention=record)

    def _chain_for(self, chain: ChainState) -> ChainState:
        return chain if self.config.chain_history else chain.cut()

    def forward_dialogue(
        self,
        dialogue: PreparedDialogue,
        *,
        chain_history: bool | None = None,
    ) -> list[QuestionOutput]:
        """
        Teacher-forced pass over every QA pair in order. Each answer's final
        decoder state chains into the next question unless chaining is off.
        """
        if len(dialogue) == 0:
            raise InputError(f"dialogue {dialogue.id} has no QA pairs")
        chained = self.config.chain_history if chain_history is None else chain_history
        scene = self.encode_scene(dialogue)
        chain = ChainState.start(self.hidden)
        outputs: list[QuestionOutput] = []
        for index, question_ids in enumerate(dialogue.question_ids):
            context = self.answer_context(scene, question_ids, dialogue.questions[index])
            used = chain if chained else chain.cut()
            logits, final_state = decode_teacher_forced(used, context.v, dialogue.answer_ids[index], self.decoder)
            outputs.append(
                QuestionOutput(
                    logits=logits,
                    targets=dialogue.answer_ids[index][1:],
                    context=context,
                    final_state=final_state,
                    tag=dialogue.tags[index],
                )
            )
            chain = chain.advance(final_state)
        return outputs

    def generate(
        self,
        dialogue: PreparedDialogue,
        *,
        width: int | None = None,
        max_len: int | None = None,
    ) -> Hypothesis:
        """Beam-search an answer to the last question, chaining the gold history answers."""
        if len(dialogue) == 0:
            raise InputError(f"dialogue {dialogue.id} has no QA pairs")
        with no_grad():
            scene = self.encode_scene(dialogue)
            chain = ChainState.start(self.hidden)
            for index in range(len(dialogue) - 1):
                context = self.answer_context(scene, dialogue.question_ids[index])
                _, final_state = decode_teacher_forced(
                    self._chain_for(chain), context.v, dialogue.answer_ids[index], self.decoder
                )
                chain = chain.advance(final_state)
            target = self.answer_context(scene, dialogue.question_ids[-1])
            return beam_search(
                self._chain_for(chain),
                target.v,
                self.decoder,
                width or self.config.beam_width,
                max_len or self.config.max_len,
            )

    def attention_records(self, dialogue: PreparedDialogue) -> list[QuestionAttention]:
        with no_grad():
            return [output.context.attention for output in self.forward_dialogue(dialogue)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.store.load_state_dict(state)

    def freeze(self) -> None:
        self.store.freeze()


def _feature_dim(state: dict[str, np.ndarray], modality: str) -> int:
    key = f"{modality}.lstm.W"
    return int(state[key].shape[1]) if key in state else 1


def save_run(run_dir: str | Path, model: SceneDialogModel, vocab: Vocabulary) -> Path:
    target = Path(run_dir)
    target.mkdir(parents=True, exist_ok=True)
    save_checkpoint(target / CHECKPOINT_FILE, model.state_dict())
    vocab.save(target / VOCAB_FILE)
    write_config(target / CONFIG_FILE, model.config)
    logger.info("Saved checkpoint to %s", target / CHECKPOINT_FILE)
    return target


def load_run(
    run_dir: str | Path,
    *,
    checkpoint: str | Path | None = None,
) -> tuple[SceneDialogModel, Vocabulary]:
    source = Path(run_dir)
    config = apply_overrides(TrainConfig(), load_config_file(source / CONFIG_FILE)).validate()
    vocab = Vocabulary.load(source / VOCAB_FILE)
    state = load_checkpoint(checkpoint if checkpoint is not None else source / CHECKPOINT_FILE)
    model = SceneDialogModel(config, len(vocab), _feature_dim(state, "visual"), _feature_dim(state, "audio"))
    model.load_state_dict(state)
    logger.debug("Loaded run %s (%d tensors)", source, len(state))
    return model, vocab
