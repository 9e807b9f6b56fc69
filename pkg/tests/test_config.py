from pathlib import Path

import pytest
import yaml

from src.cli.config import RunConfig, load_run_config, read_config_file
from src.utils.errors import ConfigurationError


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for variable in ('QV_JOBS', 'QV_LOG_LEVEL', 'QV_RUN_DIR'):
        monkeypatch.delenv(variable, raising=False)


def write_yaml(tmp_path, values, name='run.yaml'):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(values), encoding='utf-8')
    return path


def test_defaults():
    config = load_run_config()
    assert config.modules == ['fp', 'api', 'emb']
    assert config.preset == 'full'
    assert config.seed is None
    assert config.model_dir == Path('runs/default/checkpoints')
    assert config.fpr_grid == sorted(config.fpr_grid)
    with pytest.raises(ConfigurationError, match='seed'):
        config.require_seed()
    with pytest.raises(ConfigurationError, match='manifest'):
        config.require_manifest()


def test_flags_override_file(tmp_path):
    path = write_yaml(tmp_path, {'seed': 1, 'epochs': 3, 'run_dir': 'a', 'synth': {'seed': 4}})
    config = load_run_config(path, {'seed': 7, 'epochs': None, 'synth.cross_pairs': 3})
    assert config.seed == 7
    assert config.epochs == 3
    assert config.synth.seed == 4
    assert config.synth.cross_pairs == 3
    assert config.eval_dir == Path('a') / 'eval'


def test_environment_is_the_last_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv('QV_JOBS', '3')
    monkeypatch.setenv('QV_RUN_DIR', str(tmp_path / 'from-env'))
    assert load_run_config().jobs == 3
    assert load_run_config(write_yaml(tmp_path, {'jobs': 2})).jobs == 2
    assert load_run_config(None, {'jobs': 5}).jobs == 5
    assert load_run_config().run_dir == tmp_path / 'from-env'


@pytest.mark.parametrize('values', [
    {'bogus': 1},
    {'preset': 'huge'},
    {'modules': ['fp', 'registry']},
    {'fpr_grid': [0.0]},
    {'epochs': -1},
    {'threshold': 0},
])
def test_invalid_values(tmp_path, values):
    with pytest.raises(ConfigurationError):
        load_run_config(write_yaml(tmp_path, values))


def test_modules_are_canonicalized():
    assert RunConfig(modules=['emb', 'fp']).modules == ['fp', 'emb']
    assert RunConfig(fpr_grid=[0.1, 0.001]).fpr_grid == [0.001, 0.1]


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigurationError, match='not found'):
        read_config_file(tmp_path / 'missing.yaml')
    bad = tmp_path / 'bad.yaml'
    bad.write_text('seed: [1,\n', encoding='utf-8')
    with pytest.raises(ConfigurationError, match='invalid YAML'):
        read_config_file(bad)
    listed = tmp_path / 'list.yaml'
    listed.write_text('- 1\n- 2\n', encoding='utf-8')
    with pytest.raises(ConfigurationError, match='mapping'):
        read_config_file(listed)
    empty = tmp_path / 'empty.yaml'
    empty.write_text('', encoding='utf-8')
    assert read_config_file(empty) == {}


def test_checkpoints_dir_override(tmp_path):
    config = RunConfig(run_dir=tmp_path / 'run', checkpoints_dir=tmp_path / 'ckpt', corpus_dir=tmp_path / 'c')
    assert config.model_dir == tmp_path / 'ckpt'
    assert config.synthetic_dir == tmp_path / 'c'
    assert config.predictions_path == tmp_path / 'run' / 'predictions.csv'
