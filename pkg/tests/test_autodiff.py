"""Autodiff engine: op semantics and finite-difference agreement."""

from __future__ import annotations

import numpy as np
import pytest

from modvqa.errors import DataError
from modvqa.nn import Tensor, check_gradients, concat, softplus


class TestBasics:
    def test_square_sum_gradient(self):
        w = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        loss = (w * w).sum()
        loss.backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0, 6.0])

    def test_no_grad_leaf_stays_absent(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        x = Tensor(np.array([3.0, 4.0]))
        loss = (w * x).sum()
        loss.backward()
        assert x.grad is None
        np.testing.assert_allclose(w.grad, [3.0, 4.0])

    def test_disconnected_leaf_no_error(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        other = Tensor(np.array([5.0]), requires_grad=True)
        loss = (w * w).sum()
        loss.backward()
        assert other.grad is None  # zero contribution, not an error

    def test_repeated_backward_accumulates_then_zeroes(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        (w * w).sum().backward()
        first = w.grad.copy()
        (w * w).sum().backward()
        np.testing.assert_allclose(w.grad, 2 * first)  # accumulation
        w.zero_grad()
        (w * w).sum().backward()
        np.testing.assert_allclose(w.grad, first)  # idempotent after zeroing

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with pytest.raises(DataError):
            (w * w).backward()

    def test_shared_node_fanout(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        y = w * w + w * 2.0  # w used three times
        y.sum().backward()
        np.testing.assert_allclose(w.grad, [2 * 3.0 + 2.0])


class TestOpGradients:
    """Every op against central differences in float64."""

    def check(self, build, shape, seed):
        rng = np.random.default_rng(seed)
        p = Tensor(rng.standard_normal(shape), requires_grad=True)
        errs = check_gradients(lambda: build(p), {"p": p})
        assert max(errs.values()) < 1e-6, errs

    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        b = Tensor(rng.standard_normal((1, 4)))
        self.check(lambda p: (p + b).sum(), (3, 4), 1)

    def test_mul_broadcast(self):
        rng = np.random.default_rng(2)
        b = Tensor(rng.standard_normal((3, 1)))
        self.check(lambda p: ((p * b) * (p * b)).mean(), (3, 4), 3)

    def test_sub_div(self):
        rng = np.random.default_rng(4)
        b = Tensor(rng.standard_normal((5,)) + 3.0)
        self.check(lambda p: ((p - b) / b).sum(), (5,), 5)

    def test_pow(self):
        self.check(lambda p: ((p * p + 1.0) ** 1.5).sum(), (4,), 6)

    def test_matmul(self):
        rng = np.random.default_rng(7)
        b = Tensor(rng.standard_normal((4, 2)))
        self.check(lambda p: ((p @ b) ** 2.0).sum(), (3, 4), 8)

    def test_relu(self):
        self.check(lambda p: (p.relu() * p.relu()).sum(), (17,), 9)

    def test_exp_log_sqrt(self):
        self.check(lambda p: ((p * p + 0.5).log() + (p * p + 1.0).sqrt()).sum(), (6,), 10)

    def test_softplus(self):
        self.check(lambda p: (softplus(p) * softplus(p)).sum(), (9,), 11)

    def test_mean_axes_keepdims(self):
        self.check(lambda p: (p.mean(axis=(1, 2), keepdims=True) * p).sum(), (2, 3, 4), 12)

    def test_sum_axis(self):
        self.check(lambda p: (p.sum(axis=0) ** 2.0).sum(), (3, 5), 13)

    def test_reshape_transpose(self):
        self.check(
            lambda p: (p.reshape(6, 2).transpose() ** 2.0).mean(), (3, 4), 14
        )

    def test_concat(self):
        rng = np.random.default_rng(15)
        b = Tensor(rng.standard_normal((3, 2)))
        self.check(lambda p: (concat([p, b], axis=1) ** 2.0).sum(), (3, 2), 16)

    def test_two_layer_mlp_against_differences(self):
        rng = np.random.default_rng(17)
        w1 = Tensor(rng.standard_normal((5, 8)), requires_grad=True)
        w2 = Tensor(rng.standard_normal((8, 1)), requires_grad=True)
        x = Tensor(rng.standard_normal((6, 5)))

        def build():
            return (((x @ w1).relu() @ w2) ** 2.0).mean()

        errs = check_gradients(build, {"w1": w1, "w2": w2})
        assert max(errs.values()) < 1e-4
