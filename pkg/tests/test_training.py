from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from scene_dialog_dmn.config import TrainConfig
from scene_dialog_dmn.episodic import AttentionGates
from scene_dialog_dmn.errors import ContractError, DimensionError, InputError
from scene_dialog_dmn.evaluation import teacher_forced_metrics
from scene_dialog_dmn.model import CHECKPOINT_FILE, CONFIG_FILE, VOCAB_FILE, SceneDialogModel, load_run
from scene_dialog_dmn.parameters import ParameterStore
from scene_dialog_dmn.synthetic import generate_synthetic
from scene_dialog_dmn.tensor import Tensor
from scene_dialog_dmn.training import (
    METRICS_FILE,
    Adam,
    clip_grad_norm,
    gate_entropy,
    loss,
    split_dialogues,
    train,
)


def _gates(*rows) -> list[AttentionGates]:
    return [AttentionGates(episode=i + 1, g=Tensor(row, requires_grad=True)) for i, row in enumerate(rows)]


class TestLoss:
    def test_cross_entropy_is_token_mean(self):
        logits = Tensor(np.log([[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]]))
        result = loss(logits, [0, 2], [], 0.1)
        assert result.ce == pytest.approx(-(math.log(0.5) + math.log(0.8)) / 2, abs=1e-12)
        assert result.entropy_penalty == 0.0 and result.total == result.ce

    def test_adds_gamma_times_gate_entropy(self):
        logits = Tensor(np.zeros((1, 4)))
        uniform = np.full(4, 0.25)
        result = loss(logits, [1], {"visual": _gates(uniform, uniform)}, 0.5)
        assert result.entropy_penalty == pytest.approx(2 * math.log(4), abs=1e-9)
        assert result.total == pytest.approx(math.log(4) + 0.5 * 2 * math.log(4), abs=1e-9)

    def test_one_hot_gate_has_no_entropy(self):
        assert gate_entropy(Tensor([1.0, 0.0, 0.0])).item() == pytest.approx(0.0, abs=1e-10)

    def test_gamma_zero_ignores_entropy_gradient(self):
        (entry,) = _gates([0.2, 0.3, 0.5])
        result = loss(Tensor(np.zeros((1, 3)), requires_grad=True), [0], [[entry]], 0.0)
        result.objective.backward()
        np.testing.assert_array_equal(entry.g.grad, np.zeros(3))

    def test_gate_vector_must_be_a_distribution(self):
        with pytest.raises(ContractError):
            loss(Tensor(np.zeros((1, 3))), [0], [_gates([0.5, 0.6])], 0.1)

    def test_target_count_must_match_logits(self):
        with pytest.raises(DimensionError):
            loss(Tensor(np.zeros((2, 3))), [0], [], 0.1)

    def test_target_outside_vocabulary(self):
        with pytest.raises(InputError):
            loss(Tensor(np.zeros((1, 3))), [5], [], 0.1)


class TestOptimizer:
    def test_zero_learning_rate_keeps_parameters(self):
        store = ParameterStore(seed=0)
        w = store.uniform("w", (3,), 3)
        before = w.data.copy()
        w.grad = np.ones(3)
        Adam(store, learning_rate=0.0).step()
        np.testing.assert_array_equal(w.data, before)

    def test_first_step_moves_by_learning_rate(self):
        store = ParameterStore(seed=0)
        w = store.zeros("w", (2,))
        w.grad = np.array([3.0, -0.5])
        Adam(store, learning_rate=0.01).step()
        np.testing.assert_allclose(w.data, [-0.01, 0.01], atol=1e-9)

    def test_clip_grad_norm_rescales_globally(self):
        store = ParameterStore()
        a, b = store.zeros("a", (1,)), store.zeros("b", (1,))
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        assert clip_grad_norm(store, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8])

    def test_clip_leaves_small_gradients(self):
        store = ParameterStore()
        a = store.zeros("a", (1,))
        a.grad = np.array([0.5])
        clip_grad_norm(store, 1.0)
        np.testing.assert_array_equal(a.grad, [0.5])


def test_split_is_seeded_and_disjoint():
    items = list(range(10))
    train_a, val_a = split_dialogues(items, 0.2, seed=3)
    train_b, val_b = split_dialogues(items, 0.2, seed=3)
    assert (train_a, val_a) == (train_b, val_b)
    assert len(val_a) == 2 and sorted(train_a + val_a) == items


def _tiny_config(**changes) -> TrainConfig:
    base = TrainConfig(hidden=6, epochs=2, batch_size=2, seed=1, val_fraction=0.25, max_len=3, beam_width=2)
    return replace(base, **changes).validate()


class TestTrain:
    def test_writes_run_directory(self, tmp_path):
        corpus = generate_synthetic(8, 3, 4, seed=0)
        result = train(corpus.examples(), _tiny_config(), run_dir=tmp_path / "run", features=corpus.feature_store())
        for name in (CHECKPOINT_FILE, VOCAB_FILE, CONFIG_FILE, METRICS_FILE):
            assert (tmp_path / "run" / name).is_file()
        lines = (tmp_path / "run" / METRICS_FILE).read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["epoch"] for line in lines] == [1, 2]
        assert len(result.train_set) == 6 and len(result.val_set) == 2

        model, vocab = load_run(tmp_path / "run")
        assert vocab == result.vocab
        reloaded = teacher_forced_metrics(model, result.val_set)
        original = teacher_forced_metrics(result.model, result.val_set)
        assert reloaded == original

    def test_zero_learning_rate_keeps_initial_weights(self):
        corpus = generate_synthetic(4, 3, 4, seed=0)
        config = _tiny_config(learning_rate=0.0, epochs=1)
        result = train(corpus.examples(), config, features=corpus.feature_store())
        fresh = SceneDialogModel(config, len(result.vocab), 4, 4)
        for name, values in fresh.state_dict().items():
            np.testing.assert_array_equal(result.model.state_dict()[name], values)

    def test_same_seed_gives_identical_checkpoints_and_metrics(self, tmp_path):
        corpus = generate_synthetic(6, 3, 4, seed=2)
        runs = []
        for name in ("a", "b"):
            train(corpus.examples(), _tiny_config(), run_dir=tmp_path / name, features=corpus.feature_store())
            metrics = [json.loads(line) for line in (tmp_path / name / METRICS_FILE).read_text().splitlines()]
            for entry in metrics:
                entry.pop("wall_ms")
            runs.append(((tmp_path / name / CHECKPOINT_FILE).read_bytes(), metrics))
        assert runs[0] == runs[1]

    def test_loss_decreases_on_a_small_corpus(self):
        corpus = generate_synthetic(8, 3, 4, seed=5)
        result = train(corpus.examples(), _tiny_config(epochs=6, learning_rate=0.01), features=corpus.feature_store())
        assert result.metrics[-1].total < result.metrics[0].total

    def test_empty_dataset(self):
        with pytest.raises(InputError):
            train([], _tiny_config())
