import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.nn_core.functional import PROB_EPS, activations, bce_grad, bce_loss, elu, relu, sigmoid
from src.utils.errors import DimensionError


def test_relu_example():
    np.testing.assert_array_equal(relu(np.array([-1.0, 2.0])), [0.0, 2.0])


def test_elu_example():
    np.testing.assert_allclose(elu(np.array([-1.0])), [np.exp(-1.0) - 1.0])
    np.testing.assert_allclose(elu(np.array([-1.0])), [-0.6321], atol=1e-4)


def test_sigmoid_at_zero():
    assert sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)


def test_sigmoid_is_clamped_and_finite():
    out = sigmoid(np.array([-1e4, 1e4]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(PROB_EPS)
    assert out[1] == pytest.approx(1.0 - PROB_EPS)


def test_unknown_activation():
    with pytest.raises(ValueError):
        activations(np.zeros(2), 'tanh')


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=32))
def test_activation_ranges(values):
    x = np.array(values)
    assert np.all(activations(x, 'relu') >= 0)
    assert np.all(activations(x, 'elu') >= -1.0)
    s = activations(x, 'sigmoid')
    assert np.all((s > 0) & (s < 1))


def test_bce_examples():
    assert bce_loss(np.array([1.0 - 1e-7]), np.array([1])) == pytest.approx(0.0, abs=1e-6)
    assert bce_loss(np.array([0.5]), np.array([1])) == pytest.approx(np.log(2.0))
    assert bce_loss(np.array([0.9, 0.1]), np.array([1, 0])) == pytest.approx(0.10536, abs=1e-5)


def test_bce_length_mismatch():
    with pytest.raises(DimensionError):
        bce_loss(np.array([0.5, 0.5]), np.array([1]))


def test_bce_empty_batch():
    assert bce_loss(np.zeros(0), np.zeros(0)) == 0.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0.0, 1.0), st.integers(0, 1)), min_size=1, max_size=20))
def test_bce_non_negative_and_finite(pairs):
    pred = np.array([p for p, _ in pairs])
    target = np.array([t for _, t in pairs])
    loss = bce_loss(pred, target)
    assert np.isfinite(loss) and loss >= 0.0
    assert np.all(np.isfinite(bce_grad(pred, target)))


def test_bce_grad_matches_finite_difference():
    pred = np.array([0.3, 0.8, 0.55])
    target = np.array([1, 0, 1])
    eps = 1e-7
    numeric = []
    for i in range(pred.size):
        up, down = pred.copy(), pred.copy()
        up[i] += eps
        down[i] -= eps
        numeric.append((bce_loss(up, target) - bce_loss(down, target)) / (2 * eps))
    np.testing.assert_allclose(bce_grad(pred, target), numeric, rtol=1e-5)
