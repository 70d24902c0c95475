from __future__ import annotations

import numpy as np
import pytest

from scene_dialog_dmn import tensor as T
from scene_dialog_dmn.errors import ContractError, DimensionError, DomainError, InputError
from scene_dialog_dmn.tensor import Tensor


def _param(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _numeric_grad(fn, x: Tensor, step: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x.data)
    for idx in np.ndindex(x.shape):
        original = x.data[idx]
        x.data[idx] = original + step
        plus = fn().item()
        x.data[idx] = original - step
        minus = fn().item()
        x.data[idx] = original
        grad[idx] = (plus - minus) / (2 * step)
    return grad


class TestShapes:
    def test_binary_ops_never_broadcast(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\) vs \(3,\)"):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_matmul_inner_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_zero_dimension_rejected(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((0, 3)))

    def test_take_out_of_range(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(3))[5]

    def test_embedding_lookup_rejects_bad_ids(self):
        with pytest.raises(InputError):
            T.embedding_lookup(Tensor(np.ones((4, 2))), [4])

    def test_log_of_non_positive(self):
        with pytest.raises(DomainError):
            T.log(Tensor([1.0, 0.0]))

    def test_unknown_elementwise_op(self):
        with pytest.raises(ContractError):
            T.elementwise("cosh", Tensor([1.0]))


class TestBackward:
    def test_non_scalar_root(self):
        x = _param(np.ones(3))
        with pytest.raises(ContractError):
            T.tanh(x).backward()

    def test_gradient_accumulates_until_zero_grad(self):
        x = _param([1.0, 2.0])
        T.sum(x * 3.0).backward()
        T.sum(x * 3.0).backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])
        x.zero_grad()
        assert x.grad is None

    def test_replaying_a_tape_is_bitwise_repeatable(self):
        rng = np.random.default_rng(4)
        a = _param(rng.normal(size=(3, 4)))
        b = _param(rng.normal(size=(4, 2)))
        root = T.sum(T.softmax(T.tanh(T.matmul(a, b)), axis=0) * T.matmul(a, b))
        tape = T.Tape.record(root)
        tape.replay(np.ones(root.shape))
        first = (a.grad.copy(), b.grad.copy())
        a.zero_grad()
        b.zero_grad()
        tape.replay(np.ones(root.shape))
        np.testing.assert_array_equal(a.grad, first[0])
        np.testing.assert_array_equal(b.grad, first[1])
        a.zero_grad()
        b.zero_grad()
        root.backward()
        np.testing.assert_array_equal(a.grad, first[0])
        np.testing.assert_array_equal(b.grad, first[1])

    def test_shared_subexpression(self):
        x = _param([0.5, -1.5])
        y = T.tanh(x)
        T.sum(y * y + y).backward()
        t = np.tanh(x.data)
        np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), atol=1e-12)

    @pytest.mark.parametrize(
        "build",
        [
            lambda a, b: T.sum(T.matmul(a, b)),
            lambda a, b: T.sum(T.softmax(T.matmul(a, b), axis=0) * T.matmul(a, b)),
            lambda a, b: T.sum(T.log_softmax(T.matmul(a, b), axis=1) * T.matmul(a, b)),
            lambda a, b: T.sum(T.sigmoid(T.transpose(b)) * T.tanh(T.transpose(b))),
            lambda a, b: T.sum(T.exp(T.scalar_mul(T.matmul(a, b), 0.1))),
            lambda a, b: T.sum(T.concat([a, T.transpose(b)], axis=0) * 2.0),
            lambda a, b: T.sum(T.stack([a[0], a[1]]) * T.stack([a[1], a[0]])),
            lambda a, b: T.sum(T.reshape(T.matmul(a, b), (4,)) * Tensor([1.0, -2.0, 3.0, 0.5])),
            lambda a, b: T.sum(T.gated_blend(a[0], a[1], T.sigmoid(T.sum(b[0:1]))) * Tensor([1.0, -2.0, 0.5])),
            lambda a, b: T.sum(
                T.lstm_gates(T.concat([T.reshape(T.matmul(a, b), (4,)), T.reshape(T.matmul(a, b), (4,)) * 0.5]), b[1])
                * Tensor([0.7, -1.3, 0.4, 1.1])
            ),
            lambda a, b: T.sum(T.tile_rows(a[1], 3) * T.tile_rows(a[0], 3)),
            lambda a, b: T.mean(T.sum(T.matmul(a, b), axis=1) * T.sum(T.matmul(a, b), axis=1)),
        ],
    )
    def test_matches_finite_differences(self, build):
        rng = np.random.default_rng(7)
        a = _param(rng.normal(size=(2, 3)))
        b = _param(rng.normal(size=(3, 2)))
        build(a, b).backward()
        for x in (a, b):
            analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
            numeric = _numeric_grad(lambda: build(a, b), x)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_embedding_lookup_scatters_repeats(self):
        table = _param(np.arange(8.0).reshape(4, 2))
        T.sum(T.embedding_lookup(table, [1, 1, 3])).backward()
        np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_relu_subgradient_is_zero_at_kink(self):
        x = _param([0.0, 1.0, -1.0])
        T.sum(T.relu(x)).backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])


class TestModes:
    def test_no_grad_records_nothing(self):
        x = _param([1.0])
        with T.no_grad():
            y = T.tanh(x)
        assert not y.requires_grad
        y.backward()
        assert x.grad is None

    def test_detach_cuts_the_graph(self):
        x = _param([2.0])
        T.sum(x.detach() * x).backward()
        np.testing.assert_allclose(x.grad, [2.0])

    def test_boundary_monitor_counts_near_kink(self):
        with T.boundary_monitor() as counter:
            T.relu(Tensor([0.0, 5e-7, 0.1, -3.0]))
        assert counter.relu_calls == 1
        assert counter.boundary_hits == 2


class TestDistributions:
    def test_softmax_ignores_a_constant_shift(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = rng.normal(scale=5.0, size=int(rng.integers(1, 10)))
            base = T.softmax(Tensor(x)).data
            for shift in (-50.0, 7.5, 300.0):
                np.testing.assert_allclose(T.softmax(Tensor(x + shift)).data, base, rtol=0, atol=1e-12)

    def test_softmax_known_values(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, np.full(3, 1.0 / 3.0), rtol=0, atol=1e-15)
        np.testing.assert_array_equal(T.softmax(Tensor([1000.0, 0.0])).data, [1.0, 0.0])

    def test_softmax_sums_to_one_for_extreme_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = Tensor(rng.normal(scale=rng.uniform(0.1, 500.0), size=int(rng.integers(1, 12))))
            y = T.softmax(x).data
            assert np.all(y >= 0.0) and np.all(y <= 1.0)
            assert abs(y.sum() - 1.0) <= 1e-9

    def test_log_softmax_agrees_with_softmax(self):
        x = Tensor([[1.0, 2.0, 3.0], [-1.0, 0.0, 100.0]])
        np.testing.assert_allclose(np.exp(T.log_softmax(x, axis=1).data), T.softmax(x, axis=1).data, atol=1e-15)

    def test_operator_overloads(self):
        a = Tensor([1.0, 2.0])
        np.testing.assert_allclose((1.0 - a).data, [0.0, -1.0])
        np.testing.assert_allclose((a * a + 1.0).data, [2.0, 5.0])
        np.testing.assert_allclose((-a).data, [-1.0, -2.0])
