import numpy as np
import pytest

from bongard.errors import DimensionMismatch, ShapeMismatch, StaleCache
from bongard.nn import (DenseLayer, Network, OptimizerState, backward, forward, grad_check,
                        linear_loss, optimize_step, squared_loss)


def test_identity_layer():
    net = Network([DenseLayer(np.eye(3), np.zeros(3), "identity")])
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(forward(net, x)[0], x)


def test_softmax_output_is_distribution():
    net = Network.build([5, 7, 4], ["tanh", "softmax"], np.random.default_rng(0))
    out, _ = forward(net, np.random.default_rng(1).normal(size=(10, 5)) * 10)
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_zero_network_gives_zero():
    net = Network([DenseLayer(np.zeros((4, 3)), np.zeros(3), "tanh")])
    assert np.all(forward(net, np.ones(4))[0] == 0)


def test_structure_validation():
    with pytest.raises(DimensionMismatch):
        Network([DenseLayer(np.zeros((2, 3)), np.zeros(3)), DenseLayer(np.zeros((4, 1)), np.zeros(1))])
    with pytest.raises(ValueError):
        Network([DenseLayer(np.zeros((2, 2)), np.zeros(2), "softmax"), DenseLayer(np.zeros((2, 1)), np.zeros(1))])
    net = Network.build([3, 2], ["identity"], np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        forward(net, np.zeros(4))


def test_init_is_fan_in_uniform():
    net = Network.build([100, 50], ["tanh"], np.random.default_rng(0))
    w = net.layers[0].weights
    assert np.abs(w).max() <= 0.1 and np.abs(w).max() > 0.09
    assert np.all(net.layers[0].biases == 0)


def test_linear_layer_weight_gradient_is_outer_product():
    rng = np.random.default_rng(2)
    net = Network.build([4, 3], ["identity"], rng)
    x, g = rng.normal(size=4), rng.normal(size=3)
    out, cache = forward(net, x)
    grads = backward(net, cache, g)
    assert np.allclose(grads.params[0], np.outer(x, g))
    assert np.allclose(grads.params[1], g)
    assert np.allclose(grads.input, net.layers[0].weights @ g)


def test_backward_is_linear_in_output_gradient():
    rng = np.random.default_rng(3)
    net = Network.build([6, 5, 2], ["tanh", "identity"], rng)
    x, g = rng.normal(size=(4, 6)), rng.normal(size=(4, 2))
    _, cache = forward(net, x)
    one = backward(net, cache, g).params
    two = backward(net, cache, 2 * g).params
    for a, b in zip(one, two):
        assert np.allclose(b, 2 * a)


def test_stale_cache_rejected():
    rng = np.random.default_rng(4)
    net = Network.build([3, 2], ["tanh"], rng)
    _, cache = forward(net, np.ones(3))
    optimize_step(OptimizerState(kind="sgd", lr=0.1), net, [np.ones((3, 2)), np.ones(2)])
    with pytest.raises(StaleCache):
        backward(net, cache, np.ones(2))
    other = Network.build([3, 2], ["tanh"], rng)
    with pytest.raises(StaleCache):
        backward(other, forward(net, np.ones(3))[1], np.ones(2))


def test_grad_check_three_layer_net():
    rng = np.random.default_rng(5)
    net = Network.build([8, 6, 5, 3], ["tanh", "relu", "softmax"], rng)
    x = rng.normal(size=(3, 8))
    report = grad_check(net, x, linear_loss(rng.normal(size=(3, 3))), max_coords=None)
    assert report.max_rel_error <= 1e-4
    assert report.checked == net.n_params()


def test_grad_check_linear_squared():
    rng = np.random.default_rng(6)
    net = Network.build([5, 3], ["identity"], rng)
    report = grad_check(net, rng.normal(size=(4, 5)), squared_loss(rng.normal(size=(4, 3))), max_coords=None)
    assert report.max_rel_error <= 1e-7


def test_grad_check_tanh_mlp_and_determinism():
    rng = np.random.default_rng(7)
    net = Network.build([256, 64, 2], ["tanh", "identity"], rng)
    x = rng.integers(0, 2, size=(6, 256)).astype(float)
    loss = squared_loss(rng.normal(size=(6, 2)))
    a = grad_check(net, x, loss, max_coords=300, seed=11)
    b = grad_check(net, x, loss, max_coords=300, seed=11)
    assert a.max_rel_error <= 1e-4
    assert a == b


def test_sgd_zero_gradient_keeps_params():
    p = [np.array([1.0, 2.0])]
    optimize_step(OptimizerState(kind="sgd", lr=0.5), p, [np.zeros(2)])
    assert p[0].tolist() == [1.0, 2.0]


def test_sgd_quadratic_bowl_matches_geometric_decay():
    w = [np.array([1.0])]
    state = OptimizerState(kind="sgd", lr=0.1)
    for t in range(1, 101):
        optimize_step(state, w, [2 * w[0]])
        assert w[0][0] == pytest.approx(0.8 ** t, rel=1e-12)
    assert abs(w[0][0]) < 1e-3


def test_adam_step_count_and_shape_check():
    state = OptimizerState()
    p = [np.ones((2, 2))]
    for k in range(1, 4):
        optimize_step(state, p, [np.ones((2, 2))])
        assert state.step == k
    # first Adam step moves each coordinate by lr
    q = [np.zeros(3)]
    optimize_step(OptimizerState(lr=0.01), q, [np.array([1.0, -5.0, 0.0])])
    assert np.allclose(q[0], [-0.01, 0.01, 0.0], atol=1e-9)
    with pytest.raises(ShapeMismatch):
        optimize_step(state, p, [np.ones(3)])


def test_network_and_optimizer_checkpoint_roundtrip():
    rng = np.random.default_rng(8)
    net = Network.build([4, 3, 2], ["tanh", "softmax"], rng)
    state = OptimizerState()
    optimize_step(state, net, [np.ones_like(p) for p in net.params()])
    clone = Network.from_dict(net.to_dict())
    x = rng.normal(size=4)
    assert np.array_equal(forward(clone, x)[0], forward(net, x)[0])
    restored = OptimizerState.from_dict(state.to_dict(), [p.shape for p in net.params()])
    assert restored.step == 1
    assert all(np.array_equal(a, b) for a, b in zip(restored.m, state.m))
