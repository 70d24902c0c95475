from __future__ import annotations

import numpy as np
import pytest

from scene_dialog_dmn.attention import TextAttentionParams, text_attend
from scene_dialog_dmn.errors import DimensionError
from scene_dialog_dmn.parameters import ParameterStore
from scene_dialog_dmn.tensor import Tensor


def _setup(seed: int, length: int, hidden: int = 4):
    rng = np.random.default_rng(seed)
    params = TextAttentionParams.create(ParameterStore(seed=seed), "caption.attention", hidden)
    return params, Tensor(rng.normal(scale=3.0, size=(length, hidden))), Tensor(rng.normal(size=hidden))


def test_matches_additive_attention_formula():
    params, states, q = _setup(0, 5)
    result = text_attend(states, q, params, "summary")
    e = np.array(
        [
            params.w.data @ np.tanh(params.key.W.data @ t + params.key.b.data + params.query.W.data @ q.data + params.query.b.data)
            + params.b.data[0]
            for t in states.data
        ]
    )
    alpha = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
    np.testing.assert_allclose(result.alpha.data, alpha, atol=1e-12)
    np.testing.assert_allclose(result.context.data, alpha @ states.data, atol=1e-12)
    assert result.source == "summary"


def test_distribution_and_convex_hull():
    for seed in range(200):
        params, states, q = _setup(seed, 1 + seed % 9)
        result = text_attend(states, q, params)
        alpha = result.alpha.data
        assert np.all(alpha >= 0.0) and abs(alpha.sum() - 1.0) <= 1e-9
        assert np.all(result.context.data >= states.data.min(axis=0) - 1e-12)
        assert np.all(result.context.data <= states.data.max(axis=0) + 1e-12)


def test_single_token_gets_all_weight():
    params, states, q = _setup(3, 1)
    result = text_attend(states, q, params)
    np.testing.assert_allclose(result.alpha.data, [1.0])
    np.testing.assert_allclose(result.context.data, states.data[0])


def test_question_width_must_match():
    params, states, _ = _setup(1, 3)
    with pytest.raises(DimensionError):
        text_attend(states, Tensor(np.ones(5)), params)


def test_identical_states_split_evenly():
    params, states, q = _setup(4, 2)
    same = Tensor(np.stack([states.data[0], states.data[0]]))
    result = text_attend(same, q, params)
    np.testing.assert_allclose(result.alpha.data, [0.5, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(result.context.data, states.data[0], rtol=0, atol=1e-12)


def test_constant_added_to_every_score_changes_nothing():
    params, states, q = _setup(5, 6)
    before = text_attend(states, q, params).alpha.data
    params.b.data = params.b.data + 40.0
    after = text_attend(states, q, params).alpha.data
    np.testing.assert_allclose(after, before, rtol=0, atol=1e-12)
