import pytest
from pydantic import ValidationError

from src.fusion.configs import (
    MODULE_ORDER,
    SequenceCnnConfig,
    all_subsets,
    api_cnn_config,
    canonical_subset,
    comparison_configs,
    ember_ffnn_config,
    meta_config,
    parse_subset,
    path_cnn_config,
    subset_label,
)
from src.utils.errors import ConfigurationError


def test_full_presets():
    fp, api, emb = path_cnn_config('full'), api_cnn_config('full'), ember_ffnn_config('full')
    assert (fp.vocab_size, fp.seq_length, fp.embed_dim) == (150, 100, 64)
    assert (api.vocab_size, api.seq_length, api.embed_dim) == (600, 150, 96)
    for config in (fp, api):
        assert config.kernel_widths == [2, 3, 4, 5]
        assert config.channels == 128
        assert config.widths == [1024, 512, 256, 128]
        assert config.embedding_rows == config.vocab_size + 2
    assert emb.hidden == [512, 512, 128]
    assert (emb.activation, emb.normalization, emb.dropout) == ('elu', 'layernorm', 0.05)


def test_compact_preset_keeps_representation_width():
    assert path_cnn_config('compact').representation_dim == 128
    assert ember_ffnn_config('compact').representation_dim == 128


def test_preset_overrides():
    assert path_cnn_config('compact', vocab_size=40, seq_length=12).seq_length == 12


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        path_cnn_config('huge')


def test_representation_width_is_fixed():
    with pytest.raises(ValidationError):
        SequenceCnnConfig(vocab_size=10, seq_length=10, embed_dim=4, widths=[64, 32])


def test_kernels_must_fit_sequence():
    with pytest.raises(ValidationError):
        SequenceCnnConfig(vocab_size=10, seq_length=4, embed_dim=4)


def test_meta_presets():
    assert meta_config(4).hidden == [384, 128, 64, 16]
    assert meta_config(0).kind == 'logistic_regression'
    assert [c.label for c in comparison_configs()] == ['lr', 'ffnn2', 'ffnn3', 'ffnn4', 'ffnn5']
    with pytest.raises(ConfigurationError):
        meta_config(7)


def test_subsets_are_canonical():
    assert canonical_subset(['emb', 'fp']) == ('fp', 'emb')
    assert subset_label(['api', 'fp']) == 'fp+api'
    assert parse_subset('emb+api') == ('api', 'emb')
    assert all_subsets()[-1] == MODULE_ORDER
    assert len(all_subsets()) == 7
    assert len(set(all_subsets())) == 7


@pytest.mark.parametrize('modules', [[], ['fp', 'fp'], ['fp', 'registry']])
def test_bad_subsets(modules):
    with pytest.raises(ConfigurationError):
        canonical_subset(modules)
