"""
Tests for the taped tensor engine: autodiff, layers, Adam, gradient checking
"""

import itertools

import numpy as np
import pytest

from engine.functional import (
    BatchNormState, LstmWeights, batch_norm, conv_valid, cross_entropy_with_l2, dropout, layer_norm, linear,
    lstm_step, matmul, pointwise, softmax_rows,
)
from engine.gradcheck import gradient_check, numerical_gradient
from engine.optim import Adam, AdamState, adam_step
from engine.tensor import Tensor, backward, get_tape, no_grad
from utils.errors import ConfigError, DataError, DimensionError, NumericError, UsageError


def param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


# =============================================================================
# Tape and elementwise ops
# =============================================================================

class TestTape:

    def test_records_only_when_inputs_need_grad(self):
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 4.0])
        _ = a * b
        assert len(get_tape()) == 0

        c = Tensor([1.0, 2.0], requires_grad=True)
        _ = c * b
        assert len(get_tape()) == 1

    def test_no_grad_suspends_recording(self):
        a = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = a * 2.0
        assert len(get_tape()) == 0
        assert not out.requires_grad

    def test_backward_accumulates_into_shared_leaf(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x + x * 2.0
        backward(y)
        assert x.grad == pytest.approx(2 * 3.0 + 2.0)
        assert len(get_tape()) == 0

    def test_leaf_grads_accumulate_across_calls(self):
        x = Tensor(2.0, requires_grad=True)
        backward(x * 3.0)
        backward(x * 3.0)
        assert x.grad == pytest.approx(6.0)

    def test_non_scalar_root_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            backward(x * 2.0)

    def test_broadcast_gradient_is_summed_back(self):
        x = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        backward((x + b).sum())
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_getitem_scatter_adds(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        backward(x[1:3].sum() + x[2] * 2.0)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 3.0, 0.0, 0.0])

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = Tensor([-1000.0, 0.0, 1000.0]).sigmoid()
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0])
        assert np.isfinite(out.data).all()

    @pytest.mark.parametrize("op", ["exp", "tanh", "sigmoid", "square"])
    def test_unary_gradients(self, rng, op):
        x = param(rng, 3, 2)
        ok, worst, _ = gradient_check(lambda: getattr(x, op)().sum(), [x])
        assert ok, worst

    def test_division_and_log_gradients(self, rng):
        a = Tensor(rng.uniform(1.0, 2.0, size=(4,)), requires_grad=True)
        b = Tensor(rng.uniform(1.0, 2.0, size=(4,)), requires_grad=True)
        ok, worst, _ = gradient_check(lambda: (a / b).log().sum() - (b - a).mean(), [a, b])
        assert ok, worst


# =============================================================================
# Layers
# =============================================================================

class TestMatmul:

    def test_batched_product_and_gradients(self, rng):
        a = param(rng, 2, 3, 4)
        b = param(rng, 2, 4, 5)
        np.testing.assert_allclose(matmul(a, b).data, a.data @ b.data)
        ok, worst, _ = gradient_check(lambda: (matmul(a, b) * matmul(a, b)).sum(), [a, b])
        assert ok, worst

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            matmul(param(rng, 3, 4), param(rng, 3, 4))


class TestConvValid:

    def test_output_width(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 1, 34)))
        k = Tensor(rng.standard_normal((1, 1, 1, 8)))
        assert conv_valid(x, k, stride=(1, 2)).shape == (1, 1, 1, 14)
        x = Tensor(rng.standard_normal((1, 1, 1, 33)))
        assert conv_valid(x, k, stride=(1, 2)).shape == (1, 1, 1, 13)

    @pytest.mark.parametrize("stride", [(1, 1), (1, 2), (2, 3), (3, 1)])
    def test_floor_extents_for_small_inputs(self, stride):
        sh, sw = stride
        for h, w in itertools.product(range(1, 11), repeat=2):
            for kh, kw in itertools.product(range(1, h + 1), range(1, w + 1)):
                out = conv_valid(Tensor(np.zeros((1, 1, h, w))), Tensor(np.zeros((1, 1, kh, kw))), stride)
                assert out.shape == (1, 1, (h - kh) // sh + 1, (w - kw) // sw + 1)

    def test_matches_direct_loops(self, rng):
        x = rng.standard_normal((2, 3, 5, 7))
        k = rng.standard_normal((4, 3, 2, 3))
        bias = rng.standard_normal(4)
        out = conv_valid(Tensor(x), Tensor(k), (2, 2), Tensor(bias)).data

        expected = np.zeros((2, 4, 2, 3))
        for b in range(2):
            for o in range(4):
                for i in range(2):
                    for j in range(3):
                        patch = x[b, :, 2 * i:2 * i + 2, 2 * j:2 * j + 3]
                        expected[b, o, i, j] = (patch * k[o]).sum() + bias[o]
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_three_dimensional_input(self, rng):
        x = Tensor(rng.standard_normal((3, 4, 4)))
        k = Tensor(rng.standard_normal((2, 3, 2, 2)))
        assert conv_valid(x, k).shape == (2, 3, 3)

    def test_gradients_with_stride(self, rng):
        x = param(rng, 2, 2, 4, 6)
        k = param(rng, 3, 2, 2, 3)
        bias = param(rng, 3)
        ok, worst, _ = gradient_check(lambda: conv_valid(x, k, (1, 2), bias).square().sum(), [x, k, bias])
        assert ok, worst

    def test_kernel_larger_than_input(self, rng):
        with pytest.raises(DimensionError):
            conv_valid(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 1))))

    def test_bad_stride(self):
        with pytest.raises(DimensionError):
            conv_valid(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 1, 1))), stride=(0, 1))


class TestSoftmaxAndNorms:

    def test_rows_sum_to_one_under_large_logits(self):
        out = softmax_rows(Tensor([[1000.0, 1000.0, -1000.0], [0.0, 1.0, 2.0]]))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.data[0], [0.5, 0.5, 0.0])

    def test_softmax_rejects_nan(self):
        with pytest.raises(NumericError):
            softmax_rows(Tensor([[np.nan, 1.0]]))

    def test_softmax_gradient(self, rng):
        x = param(rng, 2, 3, 4)
        w = rng.standard_normal((2, 3, 4))
        ok, worst, _ = gradient_check(lambda: (softmax_rows(x) * w).sum(), [x])
        assert ok, worst

    @pytest.mark.parametrize("n", [1, 2, 5, 116])
    def test_zero_row_is_uniform(self, n):
        np.testing.assert_allclose(softmax_rows(Tensor(np.zeros((3, n)))).data, 1.0 / n, rtol=1e-15)

    def test_log_inputs_give_proportional_weights(self):
        out = softmax_rows(Tensor([np.log([1.0, 2.0, 3.0])])).data
        np.testing.assert_allclose(out[0], [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)

    @pytest.mark.parametrize("shift", [-50.0, 0.5, 300.0])
    def test_row_shift_invariance(self, rng, shift):
        x = rng.standard_normal((4, 6))
        offsets = shift * rng.standard_normal((4, 1))
        np.testing.assert_allclose(softmax_rows(Tensor(x + offsets)).data, softmax_rows(Tensor(x)).data,
                                   rtol=1e-10, atol=1e-15)

    def test_layer_norm_two_values(self):
        np.testing.assert_allclose(layer_norm(Tensor([1.0, 3.0])).data, [-1.0, 1.0], atol=1e-5)

    @pytest.mark.parametrize("value", [0.0, 2.5, -1e6])
    def test_layer_norm_constant_input(self, value):
        out = layer_norm(Tensor(np.full((2, 3, 4), value)), axes=(1, 2)).data
        np.testing.assert_array_equal(out, 0.0)

    def test_layer_norm_moments_and_gradient(self, rng):
        x = param(rng, 2, 3, 4, 5, scale=3.0)
        out = layer_norm(x, axes=(1, 2, 3)).data
        np.testing.assert_allclose(out.mean(axis=(1, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(1, 2, 3)), 1.0, atol=1e-3)

        w = rng.standard_normal(x.shape)
        ok, worst, _ = gradient_check(lambda: (layer_norm(x, axes=(1, 2, 3)) * w).sum(), [x])
        assert ok, worst

    def test_batch_norm_training_updates_running_stats(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 2, 5)) * 2.0 + 1.0)
        state = BatchNormState(3)
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
        out = batch_norm(x, gamma, beta, state, training=True)

        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        batch_mean = x.data.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(state.running_mean, 0.1 * batch_mean)
        unbiased = x.data.var(axis=(0, 2, 3), ddof=1)
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * unbiased)
        assert state.updates == 1

    def test_batch_norm_eval_uses_initial_stats(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)))
        state = BatchNormState(3)
        out = batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state, training=False)
        np.testing.assert_allclose(out.data, x.data / np.sqrt(1.0 + state.eps))
        assert state.updates == 0

    @pytest.mark.parametrize("position", [0, 2])
    def test_batch_norm_eval_is_per_sample_affine(self, rng, position):
        state = BatchNormState(3, running_mean=np.array([0.5, -1.0, 2.0]), running_var=np.array([4.0, 0.25, 1.0]))
        gamma, beta = Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(3))
        shared = rng.standard_normal((3, 5))
        batch_a = rng.standard_normal((3, 3, 5))
        batch_b = rng.standard_normal((4, 3, 5))
        batch_a[position] = shared
        batch_b[1] = shared

        out_a = batch_norm(Tensor(batch_a), gamma, beta, state, training=False).data[position]
        out_b = batch_norm(Tensor(batch_b), gamma, beta, state, training=False).data[1]
        np.testing.assert_array_equal(out_a, out_b)
        expected = (shared - state.running_mean[:, None]) / np.sqrt(state.running_var[:, None] + state.eps)
        np.testing.assert_allclose(out_a, expected * gamma.data[:, None] + beta.data[:, None],
                                   rtol=1e-12, atol=1e-12)

    def test_batch_norm_single_sample_constant_channel(self, rng):
        x = rng.standard_normal((1, 2, 6))
        x[0, 0] = 3.0
        beta = np.array([0.25, -0.5])
        out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(beta), BatchNormState(2), training=True).data
        assert np.isfinite(out).all()
        np.testing.assert_array_equal(out[0, 0], 0.25)

    def test_batch_norm_gradient(self, rng):
        x = param(rng, 3, 2, 4)
        gamma = param(rng, 2)
        beta = param(rng, 2)
        w = rng.standard_normal((3, 2, 4))
        state = BatchNormState(2)
        ok, worst, _ = gradient_check(lambda: (batch_norm(x, gamma, beta, state, True) * w).sum(),
                                      [x, gamma, beta])
        assert ok, worst


class TestDropout:

    def test_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert dropout(x, 0.5, training=False) is x

    def test_zero_rate_in_training_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert dropout(x, 0.0, training=True) is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones(20000))
        out = dropout(x, 0.25, training=True, rng=np.random.default_rng(0)).data
        kept = out[out > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert out.mean() == pytest.approx(1.0, abs=0.03)

    def test_invalid_rate(self):
        with pytest.raises(ConfigError):
            dropout(Tensor([1.0]), 1.0, training=True, rng=np.random.default_rng(0))

    def test_pointwise_dispatch(self):
        x = Tensor([-1.0, 2.0])
        np.testing.assert_array_equal(pointwise(x, "relu").data, [0.0, 2.0])
        with pytest.raises(ConfigError):
            pointwise(x, "gelu")


class TestLstm:

    def test_gate_arithmetic_single_step(self):
        # one hidden unit, one input: z = x * w_ih + h * w_hh + b
        weights = LstmWeights(Tensor([[1.0, 2.0, 3.0, 4.0]]), Tensor([[0.0, 0.0, 0.0, 0.0]]),
                              Tensor([0.0, 1.0, 0.0, 0.0]))
        h, c = lstm_step(Tensor([0.5]), Tensor([0.0]), Tensor([0.2]), weights)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        i, f, g, o = sig(0.5), sig(2.0), np.tanh(1.5), sig(2.0)
        expected_c = f * 0.2 + i * g
        assert c.data[0] == pytest.approx(expected_c)
        assert h.data[0] == pytest.approx(o * np.tanh(expected_c))

    @pytest.mark.parametrize("batch", [None, 3])
    def test_zero_weights_keep_zero_state(self, rng, batch):
        weights = LstmWeights(Tensor(np.zeros((4, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
        lead = () if batch is None else (batch,)
        x = Tensor(rng.standard_normal(lead + (4,)))
        h, c = lstm_step(x, Tensor(np.zeros(lead + (2,))), Tensor(np.zeros(lead + (2,))), weights)
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def test_saturated_forget_gate_keeps_cell(self, rng):
        d = 3
        bias = np.zeros(4 * d)
        bias[0:d] = -50.0
        bias[d:2 * d] = 50.0
        weights = LstmWeights(Tensor(rng.standard_normal((2, 4 * d)) * 0.1), Tensor(np.zeros((d, 4 * d))),
                              Tensor(bias))
        c_prev = rng.standard_normal(d)
        _, c = lstm_step(Tensor(rng.standard_normal(2)), Tensor(np.zeros(d)), Tensor(c_prev), weights)
        np.testing.assert_allclose(c.data, c_prev, atol=1e-12)

    def test_gradients_through_time(self, rng):
        weights = LstmWeights(param(rng, 3, 8, scale=0.5), param(rng, 2, 8, scale=0.5), param(rng, 8))
        xs = [param(rng, 2, 3) for _ in range(3)]

        def loss():
            h = Tensor(np.zeros((2, 2)))
            c = Tensor(np.zeros((2, 2)))
            for x in xs:
                h, c = lstm_step(x, h, c, weights)
            return (h * h).sum()

        ok, worst, _ = gradient_check(loss, [weights.w_ih, weights.w_hh, weights.bias] + xs)
        assert ok, worst


class TestLoss:

    def test_cross_entropy_value(self):
        logits = Tensor([[2.0, 0.0], [0.0, 0.0]])
        loss = cross_entropy_with_l2(logits, [0, 1])
        expected = (-np.log(np.exp(2) / (np.exp(2) + 1)) + np.log(2.0)) / 2
        assert loss.item() == pytest.approx(expected)

    def test_l2_applies_to_given_weights_only(self, rng):
        logits = param(rng, 3, 2)
        w = param(rng, 4, 2)
        plain = cross_entropy_with_l2(logits, [0, 1, 1]).item()
        penalized = cross_entropy_with_l2(logits, [0, 1, 1], 0.1, w).item()
        assert penalized - plain == pytest.approx(0.1 * (w.data ** 2).sum())

    def test_gradient(self, rng):
        logits = param(rng, 4, 3)
        w = param(rng, 5, 3)
        ok, worst, _ = gradient_check(lambda: cross_entropy_with_l2(logits, [0, 2, 1, 2], 0.01, w), [logits, w])
        assert ok, worst

    def test_label_out_of_range(self, rng):
        with pytest.raises(DataError):
            cross_entropy_with_l2(param(rng, 2, 2), [0, 2])

    def test_linear(self, rng):
        x, w, b = param(rng, 3, 4), param(rng, 4, 2), param(rng, 2)
        np.testing.assert_allclose(linear(x, w, b).data, x.data @ w.data + b.data)


# =============================================================================
# Optimizer and gradient check utilities
# =============================================================================

class TestAdam:

    def test_first_step_moves_by_lr(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        state = AdamState(lr=0.1)
        adam_step({"p": p}, state)
        # bias-corrected first step is lr * sign(grad)
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)
        assert state.step == 1

    def test_missing_grad_is_treated_as_zero(self):
        p = Tensor([1.0], requires_grad=True)
        adam_step({"p": p}, AdamState())
        np.testing.assert_array_equal(p.data, [1.0])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_seeded_runs_are_bitwise_identical(self, seed):
        def run():
            rng = np.random.default_rng(seed)
            params = {"w": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
                      "b": Tensor(rng.standard_normal(3), requires_grad=True)}
            state = AdamState(lr=0.01)
            for _ in range(10):
                grads = {name: rng.standard_normal(p.shape) for name, p in params.items()}
                adam_step(params, state, grads)
            return params

        first, second = run(), run()
        for name in first:
            np.testing.assert_array_equal(first[name].data, second[name].data)

    def test_minimizes_quadratic(self):
        x = Tensor([5.0, -3.0], requires_grad=True)
        optimizer = Adam({"x": x}, lr=0.05)
        for _ in range(2000):
            optimizer.zero_grad()
            backward((x * x).sum())
            optimizer.step()
        np.testing.assert_allclose(x.data, 0.0, atol=0.05)


class TestGradcheck:

    def test_numerical_gradient_of_cubic(self):
        x = Tensor([1.0, 2.0])
        grad = numerical_gradient(lambda: (x * x * x).sum(), x)
        np.testing.assert_allclose(grad, [3.0, 12.0], rtol=1e-8)

    def test_detects_wrong_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)

        def broken():
            return Tensor.make("double", x.data * 2.0, (x,), lambda g: (g * 3.0,)).sum()

        ok, _, reports = gradient_check(broken, [x])
        assert not ok
        assert not reports[0]["passed"]
