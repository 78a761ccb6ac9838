"""Tests for the perceptron, its gradients, the optimizer and the replay buffer."""

import numpy as np
import pytest

from cav.voi.exceptions import ContractViolationError, ValidationError
from cav.voi.nn import Adam, Mlp, ReplayBuffer, mlp_backward, mlp_forward, soft_update


def numeric_param_grad(net, x, upstream, eps=1e-6):
    theta = net.get_flat()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[i] += sign * eps
            net.set_flat(shifted)
            grad[i] += sign * float(np.sum(net.forward(x) * upstream))
        grad[i] /= 2.0 * eps
    net.set_flat(theta)
    return grad


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


class TestMlp:
    """Construction, forward pass and checkpoints."""

    def test_invalid_layer_sizes(self):
        with pytest.raises(ContractViolationError):
            Mlp([3])
        with pytest.raises(ContractViolationError):
            Mlp([3, 0, 1])

    def test_input_dimension_checked(self):
        with pytest.raises(ContractViolationError):
            Mlp([3, 4, 1]).forward(np.zeros(2))

    def test_single_and_batch_shapes(self):
        net = Mlp([3, 8, 2], seed=1)
        assert mlp_forward(net, np.zeros(3)).shape == (2,)
        assert net.forward(np.zeros((5, 3))).shape == (5, 2)
        assert net.param_count == (3 + 1) * 8 + (8 + 1) * 2

    def test_flat_parameters(self):
        net = Mlp([2, 3, 1], seed=0)
        theta = np.arange(net.param_count, dtype=float)
        net.set_flat(theta)
        np.testing.assert_array_equal(net.get_flat(), theta)
        with pytest.raises(ContractViolationError):
            net.set_flat(theta[:-1])

    def test_checkpoint(self, tmp_path):
        net = Mlp([3, 6, 1], activation="relu", seed=4)
        loaded = Mlp.load(net.save(str(tmp_path / "net.json")))
        x = np.random.default_rng(42).normal(size=(7, 3))
        np.testing.assert_allclose(loaded.forward(x), net.forward(x))
        assert loaded.activation == net.activation

    def test_unreadable_checkpoint(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValidationError):
            Mlp.load(str(path))


class TestGradients:
    """Manual backpropagation against central differences."""

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_parameter_gradient(self, activation, rng):
        net = Mlp([3, 5, 4, 2], activation=activation, seed=3)
        x = rng.normal(size=(4, 3))
        upstream = rng.normal(size=(4, 2))
        analytic = mlp_backward(net, x, upstream).flat()
        numeric = numeric_param_grad(net, x, upstream)
        assert relative_error(analytic, numeric) <= 1e-4

    def test_input_gradient(self, rng):
        net = Mlp([3, 6, 1], seed=5)
        x = rng.normal(size=3)
        grads = mlp_backward(net, x, np.ones(1))
        eps = 1e-6
        numeric = np.array([
            (net.forward(x + eps * e)[0] - net.forward(x - eps * e)[0]) / (2 * eps)
            for e in np.eye(3)
        ])
        np.testing.assert_allclose(grads.inputs, numeric, rtol=1e-5, atol=1e-8)

    def test_upstream_shape_checked(self):
        net = Mlp([2, 3, 1])
        with pytest.raises(ContractViolationError):
            mlp_backward(net, np.zeros((4, 2)), np.zeros((4, 2)))


class TestTraining:
    """Optimizer and target-network updates."""

    def test_adam_reduces_regression_loss(self, rng):
        net = Mlp([1, 16, 1], seed=0)
        opt = Adam(net, lr=1e-2)
        x = rng.uniform(-1.0, 1.0, size=(64, 1))
        y = np.sin(2.0 * x)

        def loss():
            return float(np.mean((net.forward(x) - y) ** 2))

        before = loss()
        for _ in range(200):
            err = net.forward(x) - y
            opt.step(mlp_backward(net, x, 2.0 * err / err.size))
        assert loss() < 0.5 * before

    def test_soft_update(self):
        source, target = Mlp([2, 3, 1], seed=1), Mlp([2, 3, 1], seed=2)
        start = target.get_flat()
        soft_update(target, source, 0.25)
        np.testing.assert_allclose(target.get_flat(),
                                   0.75 * start + 0.25 * source.get_flat())
        soft_update(target, source, 1.0)
        np.testing.assert_allclose(target.get_flat(), source.get_flat())


class TestReplayBuffer:
    """Ring buffer of transitions."""

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValidationError):
            ReplayBuffer(0, 2, 1)

    def test_empty_buffer_cannot_sample(self):
        with pytest.raises(ValidationError):
            ReplayBuffer(4, 2, 1).sample(2)

    def test_wraps_at_capacity(self):
        buf = ReplayBuffer(3, 1, 1, seed=0)
        for i in range(5):
            buf.add([i], [0.0], float(i), [i + 1], False)
        assert len(buf) == 3
        s, _, r, s_next, _ = buf.sample(50)
        assert set(r.tolist()) <= {2.0, 3.0, 4.0}
        np.testing.assert_allclose(s_next[:, 0], s[:, 0] + 1.0)
