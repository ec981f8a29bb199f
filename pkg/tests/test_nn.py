import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superpanel import nn
from superpanel.seeding import derive_rng


# ---------------------------------------------------------------------------
# Finite-difference oracle


def numeric_gradients(loss_fn, arrays, h=1e-5):
    """Central differences of a scalar function over a list of arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus = loss_fn()
            arr[idx] = orig - h
            f_minus = loss_fn()
            arr[idx] = orig
            g[idx] = (f_plus - f_minus) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rel_tol=1e-4, abs_floor=1e-8, abs_tol=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        for av, nv in zip(a.ravel(), n.ravel()):
            if abs(av) < abs_floor and abs(nv) < abs_floor:
                assert abs(av - nv) < abs_tol
            else:
                rel = abs(av - nv) / max(abs(av), abs(nv))
                worst = max(worst, rel)
    assert worst < rel_tol, f"worst relative gradient error {worst}"


def tiny_net(dims, seed=0, output_blocks=None):
    return nn.init_weights(dims, seed=seed, output_blocks=output_blocks)


class TestForward:
    def test_zero_network_tanh_zero_output(self):
        layer = nn.DenseLayer(np.zeros((3, 2)), np.zeros(3), "tanh")
        net = nn.Network([layer])
        y, _ = nn.forward(net, np.array([1.0, -2.0]))
        assert np.all(y == 0.0)

    def test_identity_linear(self):
        layer = nn.DenseLayer(np.eye(4), np.zeros(4), "linear")
        net = nn.Network([layer])
        x = np.array([0.5, -1.0, 2.0, 0.0])
        y, _ = nn.forward(net, x)
        assert np.array_equal(y, x)

    def test_hand_matrix_arithmetic(self):
        layer = nn.DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]),
                              np.array([0.5, -0.5]), "linear")
        y, _ = nn.forward(nn.Network([layer]), np.array([1.0, 1.0]))
        assert np.allclose(y, [3.5, 6.5])

    def test_dimension_mismatch(self):
        net = tiny_net([3, 2])
        with pytest.raises(nn.DimensionError):
            nn.forward(net, np.zeros(4))

    def test_batch_matches_per_row(self):
        net = tiny_net([4, 5, 3], seed=2)
        x = derive_rng(0, "batch").standard_normal((6, 4))
        batch_y, _ = nn.forward(net, x)
        for i in range(6):
            row_y, _ = nn.forward(net, x[i])
            assert np.allclose(batch_y[i], row_y)

    def test_deterministic(self):
        net = tiny_net([3, 3], seed=5)
        x = np.array([0.1, 0.2, 0.3])
        a, _ = nn.forward(net, x)
        b, _ = nn.forward(net, x)
        assert np.array_equal(a, b)


class TestSoftmax:
    def test_uniform_on_zeros(self):
        assert np.allclose(nn.softmax(np.zeros(3)), [1 / 3] * 3)

    def test_direct_evaluation(self):
        v = np.log([1.0, 2.0, 3.0])
        assert np.allclose(nn.softmax(v), [1 / 6, 2 / 6, 3 / 6])

    def test_sums_to_one_within_tolerance(self):
        rng = derive_rng(1, "sm")
        for _ in range(200):
            p = nn.softmax(rng.standard_normal(int(rng.integers(1, 12))) * 10)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p > 0)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=8),
           st.floats(-100, 100))
    @settings(max_examples=100)
    def test_shift_invariance(self, values, c):
        v = np.array(values)
        assert np.allclose(nn.softmax(v + c), nn.softmax(v), atol=1e-12)

    def test_extreme_logits_stable(self):
        p = nn.softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.isfinite(p).all() and abs(p.sum() - 1.0) < 1e-12


class TestBackward:
    def test_zero_output_gradient(self):
        net = tiny_net([3, 4, 2], seed=3)
        x = np.array([0.3, -0.2, 0.9])
        _, tape = nn.forward(net, x)
        grads = nn.backward(net, tape, np.zeros(2))
        for g in grads.flat():
            assert np.all(g == 0.0)

    def test_textbook_linear_layer(self):
        # loss = 0.5 ||y - t||^2 for a single linear layer: dL/dW = (y - t) x^T
        w = np.array([[0.5, -1.0], [2.0, 0.25]])
        layer = nn.DenseLayer(w.copy(), np.array([0.1, -0.1]), "linear")
        net = nn.Network([layer])
        x = np.array([1.5, -0.5])
        t = np.array([1.0, 0.0])
        y, tape = nn.forward(net, x)
        grads = nn.backward(net, tape, y - t)
        assert np.allclose(grads.weight_grads[0], np.outer(y - t, x))
        assert np.allclose(grads.bias_grads[0], y - t)

    def test_random_tanh_net_vs_finite_differences(self):
        net = tiny_net([8, 6, 4], seed=11)
        rng = derive_rng(7, "fd")
        x = rng.standard_normal(8)
        t = rng.standard_normal(4)

        def loss_fn():
            y, _ = nn.forward(net, x)
            return 0.5 * float(np.sum((y - t) ** 2))

        y, tape = nn.forward(net, x)
        analytic = nn.backward(net, tape, y - t).flat()
        numeric = numeric_gradients(loss_fn, net.parameters())
        assert_grads_close(analytic, numeric)

    def test_softmax_blocks_head_vs_finite_differences(self):
        blocks = (("softmax", 3), ("linear", 2), ("softmax", 2))
        net = nn.init_weights([5, 6, 7], seed=13, output_blocks=blocks)
        rng = derive_rng(19, "fd2")
        x = rng.standard_normal(5)
        target = np.zeros(7)
        target[1] = 1.0  # one-hot in first block
        target[5] = 1.0  # one-hot in last block
        target[3:5] = rng.standard_normal(2)

        def loss_fn():
            y, _ = nn.forward(net, x)
            cat = -(target[0:3] @ np.log(y[0:3])) - (target[5:7] @ np.log(y[5:7]))
            num = 0.5 * float(np.sum((y[3:5] - target[3:5]) ** 2))
            return float(cat) + num

        y, tape = nn.forward(net, x)
        grad_out = np.zeros(7)
        grad_out[0:3] = -target[0:3] / y[0:3]
        grad_out[5:7] = -target[5:7] / y[5:7]
        grad_out[3:5] = y[3:5] - target[3:5]
        analytic = nn.backward(net, tape, grad_out).flat()
        numeric = numeric_gradients(loss_fn, net.parameters())
        assert_grads_close(analytic, numeric)

    def test_batched_gradients_sum_of_rows(self):
        net = tiny_net([4, 3], seed=17)
        rng = derive_rng(23, "sum")
        x = rng.standard_normal((5, 4))
        g_out = rng.standard_normal((5, 3))
        _, tape = nn.forward(net, x)
        batched = nn.backward(net, tape, g_out)
        summed_w = np.zeros_like(net.layers[0].weights)
        summed_b = np.zeros_like(net.layers[0].biases)
        for i in range(5):
            _, tape_i = nn.forward(net, x[i])
            g = nn.backward(net, tape_i, g_out[i])
            summed_w += g.weight_grads[0]
            summed_b += g.bias_grads[0]
        assert np.allclose(batched.weight_grads[0], summed_w)
        assert np.allclose(batched.bias_grads[0], summed_b)


class TestRmsprop:
    def test_zero_gradient_keeps_params(self):
        params = [np.array([1.0, -2.0])]
        state = nn.rmsprop_init(params)
        state.accumulators[0][:] = 0.5
        nn.rmsprop_step(params, [np.zeros(2)], state)
        assert np.array_equal(params[0], [1.0, -2.0])
        assert np.allclose(state.accumulators[0], 0.45)  # decayed by rho

    def test_first_step_hand_computation(self):
        lr, rho, eps = 0.001, 0.9, 1e-8
        g = 0.3
        params = [np.array([2.0])]
        state = nn.rmsprop_init(params, lr, rho, eps)
        nn.rmsprop_step(params, [np.array([g])], state)
        expected = 2.0 - lr * g / math.sqrt((1 - rho) * g * g + eps)
        assert params[0][0] == pytest.approx(expected, rel=1e-12)
        # for |g| >> sqrt(eps) this is close to -lr * sign(g) / sqrt(1 - rho)
        assert params[0][0] == pytest.approx(2.0 - lr / math.sqrt(1 - rho), rel=1e-4)

    def test_defaults(self):
        state = nn.rmsprop_init([np.zeros(1)])
        assert state.learning_rate == 0.001 and state.rho == 0.9

    def test_accumulator_nonnegative_always(self):
        rng = derive_rng(29, "acc")
        params = [rng.standard_normal((3, 3))]
        state = nn.rmsprop_init(params)
        for _ in range(100):
            nn.rmsprop_step(params, [rng.standard_normal((3, 3)) * 10], state)
            assert np.all(state.accumulators[0] >= 0)

    def test_shape_mismatch(self):
        params = [np.zeros(2)]
        state = nn.rmsprop_init(params)
        with pytest.raises(nn.DimensionError):
            nn.rmsprop_step(params, [np.zeros(3)], state)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = nn.init_weights([10, 5, 2], seed=42)
        b = nn.init_weights([10, 5, 2], seed=42)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_biases_zero(self):
        net = nn.init_weights([6, 4, 2], seed=1)
        for layer in net.layers:
            assert np.all(layer.biases == 0.0)

    def test_weight_variance_matches_fan_rule(self):
        net = nn.init_weights([200, 100], seed=7)
        w = net.layers[0].weights
        assert w.size >= 10_000
        expected = 2.0 / (200 + 100)
        assert np.var(w) == pytest.approx(expected, rel=0.1)

    def test_layer_chain_validated(self):
        with pytest.raises(nn.DimensionError):
            nn.Network([
                nn.DenseLayer(np.zeros((3, 2)), np.zeros(3), "tanh"),
                nn.DenseLayer(np.zeros((2, 4)), np.zeros(2), "linear"),
            ])

    def test_block_widths_must_sum(self):
        with pytest.raises(nn.DimensionError):
            nn.DenseLayer(np.zeros((5, 2)), np.zeros(5), "softmax_blocks",
                          blocks=(("softmax", 2), ("linear", 2)))
