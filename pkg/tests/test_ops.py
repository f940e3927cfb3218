import math

import numpy as np
import pytest

from dermcnn.nn import ops
from dermcnn.nn.adam import adam_step, init_adam
from dermcnn.errors import (
    LabelNotBinary,
    NonIntegralOutputSize,
    ShapeMismatch,
    WindowLargerThanInput,
)
from gradcheck import fd_grad, max_rel_err

TOL = 1e-4


class TestConvForward:
    def test_identity_kernel(self):
        x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
        w = np.ones((1, 1, 1, 1))
        y, _ = ops.conv2d_forward(x, w, np.zeros(1))
        assert np.array_equal(y, x)

    def test_zero_weights_give_bias(self):
        x = np.random.default_rng(0).random((2, 3, 4, 4))
        w = np.zeros((5, 3, 3, 3))
        b = np.full(5, 1.75)
        y, _ = ops.conv2d_forward(x, w, b, stride=1, pad=1)
        assert np.allclose(y, 1.75)

    def test_sum_kernel(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        w = np.ones((1, 1, 2, 2))
        y, _ = ops.conv2d_forward(x, w, np.zeros(1))
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 10.0

    def test_non_integral_output_rejected(self):
        with pytest.raises(NonIntegralOutputSize):
            ops.conv2d_forward(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 2, 2)), np.zeros(1), stride=2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ops.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


class TestConvBackward:
    def test_zero_dy_zero_grads(self):
        rng = np.random.default_rng(1)
        x = rng.random((2, 3, 5, 5))
        w = rng.random((4, 3, 3, 3))
        y, cache = ops.conv2d_forward(x, w, rng.random(4), pad=1)
        dx, dw, db = ops.conv2d_backward(cache, np.zeros_like(y))
        assert not dx.any() and not dw.any() and not db.any()

    def test_one_by_one_kernel_dw_is_input_sum(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        w = np.full((1, 1, 1, 1), 0.5)
        y, cache = ops.conv2d_forward(x, w, np.zeros(1))
        _, dw, db = ops.conv2d_backward(cache, np.ones_like(y))
        assert dw[0, 0, 0, 0] == 10.0
        assert db[0] == 4.0

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_matches_finite_differences(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        y0, cache = ops.conv2d_forward(x, w, b, stride=stride, pad=pad)
        r = rng.standard_normal(y0.shape)
        dx, dw, db = ops.conv2d_backward(cache, r)

        def loss():
            return float((ops.conv2d_forward(x, w, b, stride=stride, pad=pad)[0] * r).sum())

        assert max_rel_err(dx, fd_grad(loss, x)) < TOL
        assert max_rel_err(dw, fd_grad(loss, w)) < TOL
        assert max_rel_err(db, fd_grad(loss, b)) < TOL


class TestMaxPool:
    def test_two_by_two(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y, _ = ops.maxpool_forward(x, 2, 2)
        assert y[0, 0, 0, 0] == 4.0

    def test_constant_ties_route_to_first(self):
        x = np.full((1, 1, 4, 4), 0.3)
        y, cache = ops.maxpool_forward(x, 2, 2)
        assert np.allclose(y, 0.3)
        dx = ops.maxpool_backward(cache, np.ones_like(y))
        expected = np.zeros((4, 4))
        expected[::2, ::2] = 1.0  # first element of each window
        assert np.array_equal(dx[0, 0], expected)

    def test_against_bruteforce_windows(self):
        rng = np.random.default_rng(7)
        x = rng.random((2, 3, 4, 4))
        y, _ = ops.maxpool_forward(x, 2, 2)
        for n in range(2):
            for c in range(3):
                for i in range(2):
                    for j in range(2):
                        window = x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                        assert y[n, c, i, j] == window.max()

    def test_gradient_mass_conserved(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 2, 6, 6))
        y, cache = ops.maxpool_forward(x, 2, 2)
        dy = rng.standard_normal(y.shape)
        dx = ops.maxpool_backward(cache, dy)
        assert math.isclose(dx.sum(), dy.sum(), rel_tol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((2, 2, 4, 4))
        y0, cache = ops.maxpool_forward(x, 2, 2)
        r = rng.standard_normal(y0.shape)
        dx = ops.maxpool_backward(cache, r)

        def loss():
            return float((ops.maxpool_forward(x, 2, 2)[0] * r).sum())

        assert max_rel_err(dx, fd_grad(loss, x)) < TOL

    def test_window_larger_than_input(self):
        with pytest.raises(WindowLargerThanInput):
            ops.maxpool_forward(np.zeros((1, 1, 2, 2)), 3, 1)


class TestDense:
    def test_forward_value(self):
        x = np.array([[1.0, 2.0]])
        w = np.array([[3.0, 4.0], [5.0, 6.0]])
        b = np.array([0.5, -0.5])
        y, _ = ops.dense_forward(x, w, b)
        assert np.allclose(y, [[11.5, 16.5]])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((2, 4))
        b = rng.standard_normal(2)
        y0, cache = ops.dense_forward(x, w, b)
        r = rng.standard_normal(y0.shape)
        dx, dw, db = ops.dense_backward(cache, r)

        def loss():
            return float((ops.dense_forward(x, w, b)[0] * r).sum())

        assert max_rel_err(dx, fd_grad(loss, x)) < TOL
        assert max_rel_err(dw, fd_grad(loss, w)) < TOL
        assert max_rel_err(db, fd_grad(loss, b)) < TOL


class TestActivations:
    def test_relu_values(self):
        y, _ = ops.relu(np.array([-3.0, 0.0, 3.0]))
        assert np.array_equal(y, [0.0, 0.0, 3.0])

    def test_sigmoid_at_zero(self):
        y, _ = ops.sigmoid(np.array([0.0]))
        assert y[0] == 0.5

    def test_sigmoid_stable_at_extremes(self):
        y, _ = ops.sigmoid(np.array([-800.0, 800.0]))
        assert np.isfinite(y).all()
        assert 0.0 <= y[0] < 1e-100
        assert y[1] == 1.0  # saturates in float

    @pytest.mark.parametrize("seed", range(4))
    def test_relu_fd(self, seed):
        rng = np.random.default_rng(300 + seed)
        x = rng.standard_normal((4, 5)) + 0.05  # keep away from the kink
        y0, cache = ops.relu(x)
        r = rng.standard_normal(y0.shape)
        dx = ops.relu_backward(cache, r)

        def loss():
            return float((ops.relu(x)[0] * r).sum())

        assert max_rel_err(dx, fd_grad(loss, x)) < TOL

    @pytest.mark.parametrize("seed", range(4))
    def test_sigmoid_fd(self, seed):
        rng = np.random.default_rng(400 + seed)
        x = rng.standard_normal((3, 4))
        y0, cache = ops.sigmoid(x)
        r = rng.standard_normal(y0.shape)
        dx = ops.sigmoid_backward(cache, r)

        def loss():
            return float((ops.sigmoid(x)[0] * r).sum())

        assert max_rel_err(dx, fd_grad(loss, x)) < TOL


class TestDropout:
    def test_rate_zero_identity_both_modes(self, rng64):
        x = rng64.random((4, 4))
        for training in (True, False):
            y, _ = ops.dropout(x, 0.0, seed=1, training=training)
            assert np.array_equal(y, x)

    def test_inference_identity(self, rng64):
        x = rng64.random((4, 4))
        y, _ = ops.dropout(x, 0.7, seed=1, training=False)
        assert np.array_equal(y, x)

    def test_training_zeroes_and_rescales(self):
        x = np.ones((100, 100))
        y, _ = ops.dropout(x, 0.5, seed=3, training=True)
        dropped = (y == 0).mean()
        assert 0.4 < dropped < 0.6
        assert np.allclose(y[y != 0], 2.0)

    def test_same_seed_same_mask(self, rng64):
        x = rng64.random((8, 8))
        a, _ = ops.dropout(x, 0.4, seed=9, training=True)
        b, _ = ops.dropout(x, 0.4, seed=9, training=True)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("seed", range(3))
    def test_fd(self, seed):
        rng = np.random.default_rng(500 + seed)
        x = rng.standard_normal((5, 5))
        y0, cache = ops.dropout(x, 0.4, seed=seed, training=True)
        r = rng.standard_normal(y0.shape)
        dx = ops.dropout_backward(cache, r)

        def loss():
            return float((ops.dropout(x, 0.4, seed=seed, training=True)[0] * r).sum())

        assert max_rel_err(dx, fd_grad(loss, x)) < TOL


class TestBce:
    def test_perfect_prediction_near_zero(self):
        assert ops.bce_loss(np.array([1.0]), np.array([1])) <= 1e-6

    def test_half_is_ln_two(self):
        assert ops.bce_loss(np.array([0.5]), np.array([1])) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_rejects_non_binary(self):
        with pytest.raises(LabelNotBinary):
            ops.bce_loss(np.array([0.5]), np.array([2]))

    def test_permutation_invariant(self, rng64):
        p = rng64.random(20)
        y = rng64.integers(0, 2, 20)
        perm = rng64.permutation(20)
        assert ops.bce_loss(p, y) == pytest.approx(ops.bce_loss(p[perm], y[perm]), rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_grad_matches_fd(self, seed):
        rng = np.random.default_rng(600 + seed)
        p = rng.uniform(0.05, 0.95, size=8)
        y = rng.integers(0, 2, 8)
        g = ops.bce_grad(p, y)

        def loss():
            return ops.bce_loss(p, y)

        assert max_rel_err(g, fd_grad(loss, p)) < TOL


def reference_adam_scalar(grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8, theta=0.0):
    """Straight-line transcription of the five update equations."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(theta)
    return trace


class TestAdam:
    def _scalar_setup(self):
        params = [{"w": np.array([0.0])}]
        state = init_adam(params)
        return params, state

    def test_zero_gradient_is_noop(self, rng64):
        params = [{"w": rng64.standard_normal((3, 4))}, {}, {"b": rng64.standard_normal(5)}]
        state = init_adam(params)
        grads = [{"w": np.zeros((3, 4))}, {}, {"b": np.zeros(5)}]
        for _ in range(4):
            new_params, state = adam_step(params, grads, state)
            for before, after in zip(params, new_params):
                for key in before:
                    assert np.array_equal(before[key], after[key])
            params = new_params

    def test_first_step_value(self):
        params, state = self._scalar_setup()
        new_params, new_state = adam_step(params, [{"w": np.array([1.0])}], state)
        expected = -0.001 * (1.0 / (1.0 + 1e-8))
        assert new_params[0]["w"][0] == pytest.approx(expected, abs=1e-15)
        assert new_state.t == 1

    def test_five_steps_match_reference(self):
        params, state = self._scalar_setup()
        seen = []
        for _ in range(5):
            params, state = adam_step(params, [{"w": np.array([1.0])}], state)
            seen.append(float(params[0]["w"][0]))
        expected = reference_adam_scalar([1.0] * 5)
        for got, want in zip(seen, expected):
            assert got == pytest.approx(want, abs=1e-12)

    def test_five_steps_random_grads_match_reference(self, rng64):
        grads = rng64.standard_normal(5)
        params, state = self._scalar_setup()
        seen = []
        for g in grads:
            params, state = adam_step(params, [{"w": np.array([g])}], state)
            seen.append(float(params[0]["w"][0]))
        expected = reference_adam_scalar(list(grads))
        for got, want in zip(seen, expected):
            assert got == pytest.approx(want, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        params = [{"w": np.zeros((2, 2))}]
        state = init_adam(params)
        with pytest.raises(ShapeMismatch):
            adam_step(params, [{"w": np.zeros(3)}], state)

    def test_moment_invariants(self, rng64):
        params = [{"w": rng64.standard_normal(6)}]
        state = init_adam(params)
        for step in range(1, 6):
            grads = [{"w": rng64.standard_normal(6)}]
            params, state = adam_step(params, grads, state)
            assert state.t == step
            assert (state.v[0]["w"] >= 0).all()
