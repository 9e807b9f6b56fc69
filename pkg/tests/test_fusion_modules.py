import numpy as np
import pytest

from src.fusion.configs import MODULE_ORDER, api_cnn_config, ember_ffnn_config, meta_config, path_cnn_config
from src.fusion.modules import (
    build_ember_ffnn,
    build_meta_model,
    build_sequence_cnn,
    early_fusion,
    meta_predict,
    module_forward,
)
from src.fusion.serialization import save_meta_checkpoint, save_module_checkpoint
from src.nn_core.checkpoint import read_checkpoint
from src.utils.errors import ConfigurationError, DimensionError, TokenRangeError


def block_shapes(path):
    manifest, _ = read_checkpoint(path)
    return {block['name']: tuple(block['shape']) for block in manifest['blocks']}, manifest


@pytest.mark.parametrize('module_id, config_fn, rows, embed', [
    ('fp', path_cnn_config, 152, 64),
    ('api', api_cnn_config, 602, 96),
])
def test_sequence_cnn_architecture(tmp_path, module_id, config_fn, rows, embed):
    module = build_sequence_cnn(module_id, config_fn('full'))
    shapes, manifest = block_shapes(save_module_checkpoint(module, tmp_path / f"{module_id}.qvck", 'h'))
    assert shapes[f"{module_id}.embedding.weight"] == (rows, embed)
    for width in (2, 3, 4, 5):
        assert shapes[f"{module_id}.conv{width}.weight"] == (width * embed, 128)
    dense = [shapes[f"{module_id}.dense{i}.weight"] for i in range(4)]
    assert dense == [(512, 1024), (1024, 512), (512, 256), (256, 128)]
    assert shapes[f"{module_id}.head.weight"] == (128, 1)
    dropouts = [layer['hyper']['rate'] for layer in manifest['layers'] if layer['kind'] == 'dropout']
    assert dropouts == [0.5, 0.5, 0.5]


def test_ember_ffnn_architecture(tmp_path):
    module = build_ember_ffnn(ember_ffnn_config('full'))
    shapes, manifest = block_shapes(save_module_checkpoint(module, tmp_path / 'emb.qvck', 'h'))
    assert [shapes[f"emb.dense{i}.weight"] for i in range(3)] == [(768, 512), (512, 512), (512, 128)]
    assert [shapes[f"emb.ln{i}.gamma"] for i in range(3)] == [(512,), (512,), (128,)]
    kinds = [layer['kind'] for layer in manifest['layers']]
    assert 'batchnorm' not in kinds
    assert {layer['hyper']['rate'] for layer in manifest['layers'] if layer['kind'] == 'dropout'} == {0.05}
    assert {layer['hyper']['fn'] for layer in manifest['layers'] if layer['kind'] == 'activation'} == {'elu', 'sigmoid'}


def test_meta_ffnn_architecture(tmp_path):
    meta = build_meta_model(MODULE_ORDER, meta_config(4))
    shapes, _ = block_shapes(save_meta_checkpoint(meta, tmp_path / 'meta.qvck'))
    dense = [shapes[f"meta.dense{i}.weight"] for i in range(4)]
    assert dense == [(384, 384), (384, 128), (128, 64), (64, 16)]
    assert shapes['meta.output.weight'] == (16, 1)


def test_fusion_vector_is_384_wide_and_bounded(make_modules, make_inputs):
    fusion = early_fusion(make_inputs(), make_modules())
    assert fusion.shape == (5, 384)
    assert np.all((fusion >= 0.0) & (fusion <= 1.0))


def test_fusion_order_is_fixed(make_modules, make_inputs):
    modules, inputs = make_modules(), make_inputs()
    fusion = early_fusion(inputs, modules)
    np.testing.assert_array_equal(fusion[:, 128:256], modules['api'].represent(inputs['api']))
    np.testing.assert_array_equal(early_fusion(inputs, modules, ['emb', 'fp']),
                                  np.concatenate([fusion[:, :128], fusion[:, 256:]], axis=1))


def test_fusion_missing_module(make_modules, make_inputs):
    modules = make_modules()
    del modules['api']
    with pytest.raises(ConfigurationError):
        early_fusion(make_inputs(), modules)


def test_module_forward_is_batch_invariant(make_modules, make_inputs):
    modules, inputs = make_modules(), make_inputs(n=6)
    for module_id, module in modules.items():
        rep, score = module_forward(module, inputs[module_id])
        for i in (0, 3):
            rep_i, score_i = module_forward(module, inputs[module_id][i:i + 1])
            np.testing.assert_allclose(rep_i[0], rep[i], rtol=1e-5, atol=1e-6)
            np.testing.assert_allclose(score_i[0], score[i], rtol=1e-5, atol=1e-6)


def test_module_input_checks(make_modules):
    modules = make_modules()
    with pytest.raises(DimensionError):
        modules['fp'].represent(np.zeros((2, 11), dtype=np.int64))
    with pytest.raises(DimensionError):
        modules['emb'].represent(np.zeros((2, 25)))
    with pytest.raises(TokenRangeError):
        modules['fp'].represent(np.full((1, 12), 22))


def test_same_seed_same_parameters(make_modules):
    a, b = make_modules(seed=3), make_modules(seed=3)
    for module_id in MODULE_ORDER:
        assert a[module_id].parameter_digest() == b[module_id].parameter_digest()
    assert a['fp'].parameter_digest() != make_modules(seed=4)['fp'].parameter_digest()


def test_zero_logistic_regression_scores_one_half():
    meta = build_meta_model(MODULE_ORDER, meta_config(0))
    scores = meta.predict(np.random.default_rng(0).random((4, 384)))
    np.testing.assert_allclose(scores, 0.5)


def test_logistic_regression_is_monotone_in_positive_weight():
    meta = build_meta_model(['fp'], meta_config(0), dtype=np.float64)
    linear = meta.network.layers[0]
    linear.params['weight'][7, 0] = 2.0
    fusion = np.full((5, 128), 0.5)
    fusion[:, 7] = np.linspace(0.0, 1.0, 5)
    assert np.all(np.diff(meta.predict(fusion)) > 0)


def test_meta_predict_checks_signature_and_width():
    meta = build_meta_model(['fp', 'emb'], meta_config(2))
    assert meta.input_dim == 256
    with pytest.raises(ConfigurationError):
        meta_predict(meta, np.zeros((1, 256)), subset=['fp', 'api'])
    with pytest.raises(DimensionError):
        meta_predict(meta, np.zeros((1, 384)))
    assert meta_predict(meta, np.zeros((2, 256)), subset=['emb', 'fp']).shape == (2,)
