import numpy as np
import pytest

from src.fusion.configs import MODULE_ORDER, meta_config
from src.fusion.model_store import PIPELINE_FILE, ModelStore
from src.fusion.modules import build_meta_model, early_fusion
from src.fusion.pipeline import DEFAULT_THRESHOLD, FusionPipeline
from src.fusion.serialization import (
    meta_checkpoint_name,
    module_checkpoint_name,
    save_meta_checkpoint,
    save_module_checkpoint,
)
from src.utils.errors import CompatibilityError, ConfigurationError
from src.utils.helpers import read_json


@pytest.fixture
def pipeline(make_modules):
    modules = make_modules()
    metas = [build_meta_model(MODULE_ORDER, meta_config(2), seed=1),
             build_meta_model(['fp', 'emb'], meta_config(0), seed=2)]
    metas[1].network.layers[0].params['weight'][:] = 0.01
    return FusionPipeline(modules, metas, threshold=0.5)


def test_full_availability_uses_full_meta(pipeline, make_inputs):
    inputs = make_inputs(n=4)
    result = pipeline.predict(inputs)
    assert result.subsets == ['fp+api+emb'] * 4
    expected = pipeline.meta_for(MODULE_ORDER).predict(early_fusion(inputs, pipeline.modules))
    np.testing.assert_allclose(result.scores, expected, rtol=1e-6)
    assert set(result.module_scores) == set(MODULE_ORDER)


def test_failed_emulation_routes_to_subset_meta(pipeline, make_inputs):
    inputs = make_inputs(n=4)
    available = {'api': np.array([True, False, True, False])}
    result = pipeline.predict(inputs, available=available)
    assert result.subsets == ['fp+api+emb', 'fp+emb', 'fp+api+emb', 'fp+emb']
    assert np.isnan(result.module_scores['api'][[1, 3]]).all()
    assert not np.isnan(result.module_scores['fp']).any()

    rows = [1, 3]
    subset_inputs = {m: inputs[m][rows] for m in ('fp', 'emb')}
    expected = pipeline.meta_for(['fp', 'emb']).predict(early_fusion(subset_inputs, pipeline.modules, ['fp', 'emb']))
    np.testing.assert_allclose(result.scores[rows], expected, rtol=1e-6)


def test_modality_absent_from_batch(pipeline, make_inputs):
    inputs = make_inputs(n=3)
    inputs['api'] = None
    assert pipeline.predict(inputs).subsets == ['fp+emb'] * 3


def test_route_without_meta_model(pipeline, make_inputs):
    inputs = make_inputs(n=2)
    inputs['emb'] = None
    with pytest.raises(ConfigurationError, match='fp\\+api'):
        pipeline.predict(inputs)


def test_install_meta_needs_its_modules(make_modules):
    modules = make_modules()
    del modules['emb']
    with pytest.raises(ConfigurationError):
        FusionPipeline(modules, [build_meta_model(['fp', 'emb'], meta_config(0))])


def test_install_meta_rejects_wrong_subset(pipeline):
    with pytest.raises(ConfigurationError):
        pipeline.install_meta(build_meta_model(['fp', 'api'], meta_config(0)), subset=['fp', 'emb'])


def test_verdicts_use_greater_or_equal(pipeline):
    np.testing.assert_array_equal(pipeline.verdicts(np.array([0.49, 0.5, 0.9])), [False, True, True])


def test_pipeline_manifest(pipeline):
    manifest = pipeline.manifest()
    assert manifest['order'] == list(MODULE_ORDER)
    assert manifest['subsets'] == ['fp+api+emb', 'fp+emb']
    assert manifest['threshold'] == 0.5


def save_store(directory, modules, metas, hashes):
    for module_id, module in modules.items():
        save_module_checkpoint(module, directory / module_checkpoint_name(module_id), hashes[module_id])
    for meta in metas:
        save_meta_checkpoint(meta, directory / meta_checkpoint_name(meta.subset),
                             {m: hashes[m] for m in meta.subset})


HASHES = {'fp': 'h-fp', 'api': 'h-api', 'emb': 'h-emb'}


def test_model_store_loads_and_builds_pipeline(tmp_path, make_modules, make_inputs):
    modules = make_modules()
    metas = [build_meta_model(MODULE_ORDER, meta_config(0)), build_meta_model(['fp', 'emb'], meta_config(2))]
    save_store(tmp_path, modules, metas, HASHES)

    store = ModelStore(tmp_path)
    store.load_all_models(expected_hashes=HASHES)
    assert sorted(store.modules) == sorted(MODULE_ORDER)
    assert sorted(store.metas) == ['fp+api+emb', 'fp+emb']

    pipeline = store.build_pipeline()
    assert pipeline.threshold == DEFAULT_THRESHOLD
    store.write_pipeline_manifest(FusionPipeline(store.modules, list(store.metas.values()), threshold=0.7))
    assert read_json(tmp_path / PIPELINE_FILE)['threshold'] == 0.7
    assert store.build_pipeline().threshold == 0.7
    assert store.build_pipeline(threshold=0.2).threshold == 0.2

    inputs = make_inputs(n=3)
    np.testing.assert_allclose(store.build_pipeline().predict(inputs).scores,
                               FusionPipeline(modules, metas).predict(inputs).scores, rtol=1e-6)

    info = store.get_models_info()
    assert info['fp']['featurizer_hash'] == 'h-fp'
    assert info['meta-fp+emb']['hidden'] == [384, 128]


def test_model_store_hash_mismatch(tmp_path, make_modules):
    save_store(tmp_path, make_modules(), [], HASHES)
    with pytest.raises(CompatibilityError):
        ModelStore(tmp_path).load_all_models(expected_hashes={**HASHES, 'api': 'other'})


def test_model_store_skips_meta_without_modules(tmp_path, make_modules):
    modules = make_modules()
    save_store(tmp_path, {'fp': modules['fp']}, [], HASHES)
    save_meta_checkpoint(build_meta_model(MODULE_ORDER, meta_config(0)),
                         tmp_path / meta_checkpoint_name(MODULE_ORDER))
    store = ModelStore(tmp_path)
    store.load_all_models()
    assert list(store.modules) == ['fp']
    assert store.metas == {}
    with pytest.raises(ConfigurationError):
        store.get_meta(MODULE_ORDER)


def test_model_store_meta_featurizer_mismatch(tmp_path, make_modules):
    modules = make_modules()
    save_store(tmp_path, modules, [], HASHES)
    save_meta_checkpoint(build_meta_model(['fp'], meta_config(0)), tmp_path / meta_checkpoint_name(['fp']),
                         {'fp': 'stale'})
    with pytest.raises(CompatibilityError):
        ModelStore(tmp_path).load_all_models()
