import numpy as np
import pytest

from src.nn_core.layers import Activation, Linear
from src.nn_core.network import Network, backward
from src.nn_core.optim import Adam, AdamState, adam_step
from src.utils.errors import DimensionError, NumericError


def _state(params, lr=1e-3):
    return AdamState.for_parameters(params, learning_rate=lr)


def test_first_step_moves_by_learning_rate():
    params = [np.array([1.0])]
    params, state = adam_step(_state(params), params, [np.array([2.0])])
    assert params[0][0] == pytest.approx(0.999, abs=1e-6)
    assert state.step == 1


def test_zero_gradient_leaves_parameter_unchanged():
    params = [np.array([1.0, -3.0])]
    adam_step(_state(params), params, [np.zeros(2)])
    np.testing.assert_array_equal(params[0], [1.0, -3.0])


def test_constant_gradient_decreases_monotonically():
    params = [np.array([1.0])]
    state = _state(params)
    history = [params[0][0]]
    for _ in range(2):
        adam_step(state, params, [np.array([1.0])])
        history.append(params[0][0])
    assert history[0] > history[1] > history[2]


def test_non_finite_gradient_aborts_step():
    params = [np.array([1.0, 2.0])]
    state = _state(params)
    with pytest.raises(NumericError):
        adam_step(state, params, [np.array([np.nan, 0.0])])
    np.testing.assert_array_equal(params[0], [1.0, 2.0])
    assert state.step == 0


def test_shape_mismatch():
    params = [np.zeros((2, 2))]
    with pytest.raises(DimensionError):
        adam_step(_state(params), params, [np.zeros(4)])


def test_matches_scalar_reference():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    grads = [0.5, -1.0, 2.0, 0.1]
    params = [np.array([0.3])]
    state = _state(params, lr=lr)
    p, m, v = 0.3, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        adam_step(state, params, [np.array([g])])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert params[0][0] == pytest.approx(p, rel=1e-12)


def test_adam_reduces_loss_on_network():
    rng = np.random.default_rng(0)
    network = Network([Linear(4, 1, rng, dtype=np.float64, name='lin'), Activation('sigmoid', name='sig')])
    x = rng.normal(size=(32, 4))
    y = (x[:, 0] > 0).astype(float)
    optimizer = Adam(network, learning_rate=0.05)
    losses = []
    for _ in range(30):
        out = network.forward(x, mode='train')
        losses.append(float(-np.mean(y * np.log(out[:, 0]) + (1 - y) * np.log(1 - out[:, 0]))))
        backward(network, x, y)
        optimizer.step()
    assert losses[-1] < losses[0]
