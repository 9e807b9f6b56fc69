from pathlib import Path

from scripts.create_synthetic_corpus import create_synthetic_corpus
from scripts.run_experiment import EVENTS_FILE, ExperimentRunner
from src.cli.config import load_run_config
from src.featurizers.path_featurizer import load_env_map
from src.utils.helpers import read_json

CONFIG_DIR = Path(__file__).resolve().parents[1] / 'config'


def test_create_synthetic_corpus(tmp_path, tiny_spec, capsys):
    result = create_synthetic_corpus(tmp_path / 'corpus', tiny_spec)
    assert result.manifest_path.exists()
    assert 'Malicious share per planted (path, API) pair' in capsys.readouterr().out


def test_experiment_runner_records_stages(tmp_path, run_config):
    config = load_run_config(run_config(tmp_path / 'run', manifest=None))
    runner = ExperimentRunner(config)
    assert runner.prepare_config('featurize').manifest == config.synthetic_dir / 'manifest.tsv'
    assert runner.run(['generate', 'featurize'])
    events = read_json(tmp_path / 'run' / EVENTS_FILE)['stages']
    assert [(e['stage'], e['success']) for e in events] == [('generate', True), ('featurize', True)]
    assert 'generate' in runner.generate_experiment_report()


def test_experiment_runner_stops_at_failure(tmp_path, run_config):
    config = load_run_config(run_config(tmp_path / 'run', manifest=None, seed=None))
    assert not ExperimentRunner(config).run(['train', 'eval'])
    events = read_json(tmp_path / 'run' / EVENTS_FILE)['stages']
    assert [(e['stage'], e['success']) for e in events] == [('train', False)]


def test_shipped_configuration_loads():
    config = load_run_config(CONFIG_DIR / 'default_run.yaml')
    assert config.preset == 'full'
    assert config.meta_depth == 4
    env_map = load_env_map(CONFIG_DIR / 'env_map.txt')
    assert env_map['windir'] == '[drive]\\windows'
