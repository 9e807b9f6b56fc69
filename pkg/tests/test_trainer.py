import numpy as np
import pytest
from sklearn.metrics import f1_score

from src.fusion.configs import meta_config
from src.fusion.modules import build_meta_model
from src.nn_core.layers import Activation, Dropout, Linear
from src.nn_core.network import Network
from src.training.trainer import HISTORY_COLUMNS, TrainPlan, fit_network, pretrain_module, train_meta_model
from src.utils.errors import DimensionError, InputError


def small_network(seed=0):
    rng = np.random.default_rng(seed)
    return Network([
        Linear(4, 8, rng, dtype=np.float64, name='dense0'),
        Activation('relu', name='relu0'),
        Dropout(0.1, rng, name='dropout0'),
        Linear(8, 1, rng, dtype=np.float64, name='out'),
        Activation('sigmoid', name='sig'),
    ])


def separable(n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.normal(size=(n, 4))
    x[:, 0] = np.where(y == 1, 1.0, -1.0) * (0.5 + np.abs(x[:, 0]))
    return x, y


def plan(**overrides):
    values = dict(module_id='test', seed=0, epochs=50, batch_size=64, learning_rate=0.05, patience=50)
    values.update(overrides)
    return TrainPlan(**values)


def test_logistic_regression_learns_separable_data():
    rng = np.random.default_rng(0)
    network = Network([Linear(4, 1, rng, dtype=np.float64, name='lin', zero_init=True),
                       Activation('sigmoid', name='sig')])
    x, y = separable()
    result = fit_network(network, x, y, None, None, plan())
    accuracy = np.mean((network.forward(x, mode='eval')[:, 0] >= 0.5) == y)
    assert accuracy >= 0.99
    assert result.epochs_run == 50
    assert result.history['train_loss'].iloc[-1] < result.history['train_loss'].iloc[0]
    assert result.best_epoch is None


def test_training_is_reproducible():
    x, y = separable()
    a, b = small_network(), small_network()
    fit_network(a, x, y, x[:100], y[:100], plan(epochs=5))
    fit_network(b, x, y, x[:100], y[:100], plan(epochs=5))
    assert a.parameter_digest() == b.parameter_digest()
    c = small_network()
    fit_network(c, x, y, x[:100], y[:100], plan(epochs=5, seed=1))
    assert c.parameter_digest() != a.parameter_digest()


def test_best_validation_state_is_restored():
    x, y = separable()
    network = small_network()
    result = fit_network(network, x, y, x[:150], y[:150], plan(epochs=8, learning_rate=0.01))
    assert list(result.history.columns) == HISTORY_COLUMNS
    scores = network.forward(x[:150], mode='eval')[:, 0]
    assert f1_score(y[:150], scores >= 0.5) == pytest.approx(result.best_f1)
    assert result.best_f1 == pytest.approx(result.history['valid_f1'].max())


def test_early_stopping():
    x, y = separable()
    result = fit_network(small_network(), x, y, x[:20], np.zeros(20), plan(epochs=30, patience=3))
    assert result.best_epoch == 1
    assert result.epochs_run == 4
    assert result.history['valid_auc'].isna().all()


def test_zero_epochs():
    x, y = separable(n=10)
    network = small_network()
    before = network.parameter_digest()
    result = fit_network(network, x, y, None, None, plan(epochs=0))
    assert result.history.empty
    assert network.parameter_digest() == before


def test_label_checks():
    x, y = separable(n=10)
    with pytest.raises(DimensionError):
        fit_network(small_network(), x, y[:5], None, None, plan(epochs=1))
    with pytest.raises(InputError):
        fit_network(small_network(), x, np.full(10, 2), None, None, plan(epochs=1))


def test_pretrain_module_updates_module(make_modules, make_inputs):
    module = make_modules()['emb']
    before = module.parameter_digest()
    inputs = make_inputs(n=32)['emb']
    labels = np.arange(32) % 2
    module, history = pretrain_module(module, (inputs, labels), (inputs[:8], labels[:8]), plan(epochs=2, batch_size=8))
    assert len(history) == 2
    assert module.parameter_digest() != before


def test_train_meta_model_checks_width():
    meta = build_meta_model(['fp'], meta_config(0))
    with pytest.raises(DimensionError):
        train_meta_model(meta, (np.zeros((4, 256)), np.array([0, 1, 0, 1])), None, plan(epochs=1))


def test_train_meta_model_runs():
    rng = np.random.default_rng(0)
    x = rng.random((64, 128))
    y = (x[:, 0] > 0.5).astype(int)
    meta, result = train_meta_model(build_meta_model(['fp'], meta_config(2)), (x, y), (x, y), plan(epochs=3))
    assert result.epochs_run == 3
    assert meta.predict(x).shape == (64,)
