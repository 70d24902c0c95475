from __future__ import annotations

import numpy as np
import pytest

from scene_dialog_dmn.errors import DimensionError
from scene_dialog_dmn.parameters import Affine, ParameterStore
from scene_dialog_dmn.tensor import Tensor


def test_same_seed_same_values():
    first, second = ParameterStore(seed=3), ParameterStore(seed=3)
    for store in (first, second):
        Affine.create(store, "proj", 4, 3, 4)
    for (name_a, a), (name_b, b) in zip(first.items(), second.items()):
        assert name_a == name_b
        np.testing.assert_array_equal(a.data, b.data)


def test_uniform_init_is_bounded_by_fan():
    store = ParameterStore(seed=0)
    weights = store.uniform("w", (50, 16), 16)
    assert np.all(np.abs(weights.data) <= 0.25)
    assert weights.requires_grad and weights.name == "w"


def test_duplicate_name_rejected():
    store = ParameterStore()
    store.zeros("w", (2,))
    with pytest.raises(ValueError, match="already registered"):
        store.zeros("w", (2,))


def test_freeze_and_zero_grad():
    store = ParameterStore()
    w = store.uniform("w", (2,), 2)
    w.grad = np.ones(2)
    store.zero_grad()
    assert w.grad is None
    store.freeze()
    assert not w.requires_grad


class TestStateDict:
    def test_load_round_trip(self):
        source, target = ParameterStore(seed=1), ParameterStore(seed=2)
        Affine.create(source, "a", 3, 2, 3)
        Affine.create(target, "a", 3, 2, 3)
        target.load_state_dict(source.state_dict())
        np.testing.assert_array_equal(target["a.W"].data, source["a.W"].data)

    def test_missing_and_unexpected_names(self):
        store = ParameterStore()
        store.zeros("a", (2,))
        with pytest.raises(ValueError, match=r"missing=\['a'\] unexpected=\['b'\]"):
            store.load_state_dict({"b": np.zeros(2)})

    def test_shape_mismatch(self):
        store = ParameterStore()
        store.zeros("a", (2,))
        with pytest.raises(DimensionError):
            store.load_state_dict({"a": np.zeros(3)})


class TestAffine:
    def test_rows_matches_per_row_call(self):
        store = ParameterStore(seed=5)
        affine = Affine.create(store, "f", 3, 2, 3)
        X = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        by_rows = affine.rows(X).data
        for i in range(4):
            np.testing.assert_allclose(by_rows[i], affine(X[i]).data, atol=1e-14)

    def test_bias_shape_checked(self):
        with pytest.raises(DimensionError):
            Affine(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
