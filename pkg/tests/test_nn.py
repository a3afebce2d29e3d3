import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqndesign.nn import SGD, Adam, QNetwork, make_optimizer, sync


def loss_of(net, x, a, y):
    return 0.5 * (y - net.forward(x)[a]) ** 2


def finite_difference(net, x, a, y, h=1e-5):
    theta = net.flat_parameters()
    grad = np.empty_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        net.set_flat_parameters(up)
        f_up = loss_of(net, x, a, y)
        net.set_flat_parameters(down)
        f_down = loss_of(net, x, a, y)
        grad[j] = (f_up - f_down) / (2 * h)
    net.set_flat_parameters(theta)
    return grad


def max_relative_error(analytic, numeric):
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))


def random_net(rng, activation):
    dims = [int(rng.integers(1, 5))] + [int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 3)))]
    dims.append(int(rng.integers(1, 4)))
    return QNetwork(dims, activation, seed=int(rng.integers(2**31)))


def gradient_check_errors(n_nets=100, seed=0):
    """Worst relative error per random net, skipping inputs near a ReLU kink."""
    rng = np.random.default_rng(seed)
    errors = []
    while len(errors) < n_nets:
        activation = "tanh" if len(errors) % 2 else "relu"
        net = random_net(rng, activation)
        x = rng.normal(size=net.n_inputs)
        _, pre = net._forward(x.reshape(1, -1))
        if activation == "relu" and any(np.min(np.abs(z)) < 1e-3 for z in pre[:-1]):
            continue
        a = int(rng.integers(net.n_outputs))
        y = float(rng.normal())
        analytic = net.backward(x, a, y).flat
        errors.append(max_relative_error(analytic, finite_difference(net, x, a, y)))
    return errors


def test_zero_network_outputs_zero():
    net = QNetwork([3, 4, 2], weights=[np.zeros((3, 4)), np.zeros((4, 2))],
                   biases=[np.zeros(4), np.zeros(2)])
    assert np.array_equal(net.forward([0.3, -2.0, 5.0]), np.zeros(2))


def test_affine_layer():
    net = QNetwork([1, 1], weights=[[[2.0]]], biases=[[1.0]])
    assert net.forward([3.0]).tolist() == [7.0]


def test_forward_matches_hand_rolled_matmul():
    rng = np.random.default_rng(3)
    net = QNetwork([4, 6, 5, 3], "relu", seed=8)
    X = rng.normal(size=(20, 4))
    h = X
    for k in range(3):
        W, b = net.weights[k], net.biases[k]
        h = [[sum(row[i] * W[i][j] for i in range(len(row))) + b[j] for j in range(W.shape[1])]
             for row in h]
        if k < 2:
            h = [[max(v, 0.0) for v in row] for row in h]
    assert np.allclose(net.forward(X), np.array(h), rtol=1e-12, atol=1e-14)


def test_zero_gradient_at_target():
    net = QNetwork([4, 8, 3], seed=1)
    x = np.array([0.1, 0.5, -0.3, 1.0])
    g = net.backward(x, 2, float(net.forward(x)[2]))
    assert g.max_abs() == 0.0


def test_gradient_check_small_sample():
    assert max(gradient_check_errors(n_nets=10, seed=5)) < 1e-4


def test_unselected_heads_get_no_gradient():
    net = QNetwork([3, 5, 4], seed=2)
    g = net.backward([1.0, -1.0, 0.5], 1, 10.0)
    others = [0, 2, 3]
    assert np.all(g.weights[-1][:, others] == 0.0)
    assert np.all(g.biases[-1][others] == 0.0)
    assert np.any(g.weights[-1][:, 1] != 0.0)


def test_backward_rejects_bad_inputs():
    net = QNetwork([2, 2], seed=0)
    with pytest.raises(FloatingPointError):
        net.backward([0.0, 0.0], 0, float("nan"))
    with pytest.raises(IndexError):
        net.backward([0.0, 0.0], 2, 1.0)


def test_sgd_step_exact():
    net = QNetwork([2, 3, 2], seed=4)
    before = net.flat_parameters()
    g = net.backward([0.5, 0.5], 0, 3.0)
    SGD(0.1).step(net, g)
    assert np.array_equal(net.flat_parameters(), before - 0.1 * g.flat)


@pytest.mark.parametrize("name", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(name):
    net = QNetwork([2, 3, 2], seed=4)
    x = np.array([0.2, -0.7])
    g = net.backward(x, 1, float(net.forward(x)[1]))
    before = net.flat_parameters()
    make_optimizer(name, 0.01).step(net, g)
    assert np.array_equal(net.flat_parameters(), before)


def test_sgd_quadratic_converges():
    # with zero input the output is the bias, loss 0.5 (3 - b)^2
    net = QNetwork([1, 1], weights=[[[0.7]]], biases=[[-4.0]])
    opt = SGD(0.5)
    for _ in range(100):
        opt.step(net, net.backward([0.0], 0, 3.0))
    assert abs(net.biases[0][0] - 3.0) < 1e-8


def test_adam_reduces_loss():
    net = QNetwork([2, 8, 1], seed=0)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(64, 2))
    y = X[:, 0] - 2 * X[:, 1]
    a = np.zeros(64, dtype=int)
    opt = Adam(0.01)
    first = net.batch_gradients(X, a, y).loss
    for _ in range(500):
        opt.step(net, net.batch_gradients(X, a, y))
    assert net.batch_gradients(X, a, y).loss < 0.05 * first


def test_sync_copies_and_detaches():
    online = QNetwork([4, 6, 3], seed=1)
    target = QNetwork([4, 6, 3], seed=2)
    probe = np.random.default_rng(0).normal(size=(50, 4))
    sync(target, online)
    assert np.array_equal(target.forward(probe), online.forward(probe))
    frozen = target.forward(probe)
    SGD(0.1).step(online, online.backward(probe[0], 0, 5.0))
    assert np.array_equal(target.forward(probe), frozen)
    assert not np.array_equal(online.forward(probe), frozen)
    sync(target, online)
    once = target.flat_parameters()
    sync(target, online)
    assert np.array_equal(target.flat_parameters(), once)


def test_sync_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        sync(QNetwork([4, 3, 2]), QNetwork([4, 5, 2]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["relu", "tanh"]))
def test_forward_is_pure(seed, activation):
    net = QNetwork([4, 7, 3], activation, seed=seed)
    x = np.random.default_rng(seed).normal(size=(5, 4))
    assert np.array_equal(net.forward(x), net.forward(x.copy()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
def test_loss_non_increasing_small_step(seed, y):
    net = QNetwork([3, 6, 2], "tanh", seed=seed)
    x = np.random.default_rng(seed).normal(size=3)
    opt = SGD(1e-3)
    prev = loss_of(net, x, 0, y)
    for _ in range(50):
        opt.step(net, net.backward(x, 0, y))
        cur = loss_of(net, x, 0, y)
        assert cur <= prev + 1e-15
        prev = cur


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_serialization_round_trip(seed):
    net = QNetwork([4, 5, 5, 3], "relu", seed=seed)
    clone = QNetwork.from_dict(json.loads(json.dumps(net.to_dict())))
    x = np.random.default_rng(seed).normal(size=(10, 4))
    assert np.array_equal(clone.forward(x), net.forward(x))
    assert clone.layer_dims == net.layer_dims and clone.activation == net.activation
