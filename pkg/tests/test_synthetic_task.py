from __future__ import annotations

from dataclasses import replace

import pytest

from scene_dialog_dmn.config import TrainConfig
from scene_dialog_dmn.evaluation import localization_accuracy, teacher_forced_metrics
from scene_dialog_dmn.synthetic import VISUAL_EVENTS, generate_synthetic, majority_baseline_accuracy
from scene_dialog_dmn.training import TrainResult, train

pytestmark = pytest.mark.slow

# Smaller batches and a larger step than the defaults: 160 training dialogues
# give 80 updates per epoch.
BASE = TrainConfig(hidden=32, episodes=2, gamma=0.1, epochs=30, seed=0, batch_size=2, learning_rate=4e-3)


def _mean_epoch_ms(result: TrainResult) -> float:
    return sum(m.wall_ms for m in result.metrics) / len(result.metrics)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(200, 6, 16, seed=0)


@pytest.fixture(scope="module")
def runs(corpus):
    cache: dict[str, TrainResult] = {}

    def fit(label: str, **changes) -> TrainResult:
        if label not in cache:
            cache[label] = train(corpus.examples(), replace(BASE, **changes), features=corpus.feature_store())
        return cache[label]

    return fit


def test_answers_are_learned(corpus, runs):
    result = runs("baseline")
    report = teacher_forced_metrics(result.model, result.val_set)
    assert report.token_acc >= 0.95
    assert result.metrics[-1].val_token_acc >= 0.95
    assert majority_baseline_accuracy(corpus) <= 1.0 / len(VISUAL_EVENTS) + 0.1


def test_planted_segment_gets_the_largest_gate(corpus, runs):
    result = runs("baseline")
    assert localization_accuracy(result.model, result.val_set, corpus.planted_segments()) >= 0.95


def test_entropy_penalty_sharpens_gates(runs):
    sharp, flat = runs("baseline").metrics[-1], runs("gamma=0", gamma=0.0).metrics[-1]
    assert sharp.gate_entropy < flat.gate_entropy
    assert sharp.val_token_acc >= flat.val_token_acc - 0.02


def test_third_episode_costs_time_not_accuracy(runs):
    two, three = runs("baseline"), runs("episodes=3", episodes=3)
    assert three.metrics[-1].val_token_acc >= two.metrics[-1].val_token_acc - 0.02
    assert _mean_epoch_ms(three) > _mean_epoch_ms(two)


def test_zeroing_the_chain_hurts_followups(runs):
    result = runs("baseline")
    chained = teacher_forced_metrics(result.model, result.val_set)
    unchained = teacher_forced_metrics(result.model, result.val_set, chain_history=False)
    assert chained.followup_acc - unchained.followup_acc >= 0.05
