"""
Desk-scale end-to-end checks on a generated corpus (run with --runslow)
"""
import json

import numpy as np
import pandas as pd
import pytest

from src.cli.commands import cmd_eval, cmd_featurize, cmd_generate, cmd_predict, cmd_report, cmd_train
from src.cli.config import load_run_config
from src.data_ingestion.dataset import load_sample_reports
from src.data_ingestion.manifest import load_manifest
from src.featurizers.apiseq_featurizer import coverage_table, parse_report
from src.featurizers.static_featurizer import StaticFeaturizer
from src.utils.errors import DataError

pytestmark = pytest.mark.slow

CALIBRATION_FPR = 0.0025
COMMANDS = (cmd_generate, cmd_featurize, cmd_train, cmd_eval, cmd_predict, cmd_report)


def acceptance_run(run_dir, run_config):
    """Generate through report on a desk-scale corpus; returns the config and each command's result"""
    path = run_config(
        run_dir,
        epochs=8, meta_epochs=15, batch_size=128, learning_rate=3e-3, fpr_grid=[0.01, 0.1],
        compare_meta_models=False, calibrate_fpr=CALIBRATION_FPR,
        synth={'seed': 0, 'train_benign': 2000, 'train_malicious': 2000, 'valid_benign': 500,
               'valid_malicious': 500, 'test_benign': 500, 'test_malicious': 500, 'cross_fraction': 0.5},
    )
    config = load_run_config(path)
    return config, [command(config) for command in COMMANDS]


@pytest.fixture(scope='module')
def experiment(tmp_path_factory, run_config):
    config, results = acceptance_run(tmp_path_factory.mktemp('acceptance') / 'run', run_config)
    return config, results[3], results[5]


def test_fusion_beats_single_modules(experiment):
    _, _, outputs = experiment
    grid = pd.read_csv(outputs['detection_grid']).set_index('combination')['fpr_1e-02']
    best_single = grid[['fp', 'api', 'emb']].max()
    # cross-modality samples carry a path marker and an API marker that each also mark one benign decoy
    assert grid['fp+api+emb'] >= best_single + 15
    assert grid['fp+api'] >= max(grid['fp'], grid['api']) + 10


def test_calibrated_threshold_holds_on_both_splits(experiment):
    _, reports, _ = experiment
    assert reports['valid'].false_positive_rate <= CALIBRATION_FPR
    assert reports['test'].false_positive_rate <= 3 * CALIBRATION_FPR
    assert reports['valid'].threshold == reports['test'].threshold


def test_api_vocabulary_coverage(experiment):
    config, _, _ = experiment
    records = load_manifest(config.manifest)
    reports = load_sample_reports([r for r in records if r.split == 'train'], config.manifest.parent)
    table = coverage_table(reports)
    assert table['coverage_pct'].is_monotonic_increasing
    assert table['coverage_pct'].iloc[-1] == pytest.approx(100.0)


def test_rerun_reproduces_every_deterministic_output(experiment, tmp_path, run_config, deterministic_outputs):
    config, _, _ = experiment
    again, _ = acceptance_run(tmp_path / 'again', run_config)
    expected = deterministic_outputs(config.run_dir)
    assert {'corpus/manifest.tsv', 'checkpoints/meta-fp+api+emb.qvck', 'eval/test.txt', 'predictions.csv',
            'report/detection_grid.csv'} <= set(expected)
    assert deterministic_outputs(again.run_dir) == expected


def emulation_report_document() -> bytes:
    """A report shaped like real emulator output: call arguments, return values and a failing thread"""
    apis = [
        {'pc': '0x4010a2', 'api_name': 'kernel32.GetModuleHandleA', 'args': ['0x0'], 'ret_val': '0x400000'},
        {'pc': '0x4010b8', 'api_name': 'kernel32.GetProcAddress', 'args': ['0x77000000', 'VirtualAlloc'],
         'ret_val': '0x77012340'},
        {'pc': '0x4010d1', 'api_name': 'kernel32.VirtualAlloc', 'args': ['0x0', '0x1000', '0x3000', '0x40'],
         'ret_val': '0x50000'},
        {'pc': '0x401102', 'api_name': 'kernel32.CreateFileW',
         'args': ['C:\\Users\\user\\AppData\\Roaming\\svchost.exe', '0x40000000', '0x0', '0x0', '0x2', '0x80', '0x0'],
         'ret_val': '0x84'},
        {'pc': '0x401130', 'api_name': 'advapi32.RegSetValueExW',
         'args': ['0x88', 'Updater', '0x0', '0x1', 'C:\\Users\\user\\AppData\\Roaming\\svchost.exe', '0x5a'],
         'ret_val': '0x0'},
    ]
    payload = {
        'sample_id': '9f2c61d0b4e7a8c3',
        'emulation_total_runtime': 1.42,
        'os_run': 'windows',
        'entry_points': [
            {'ep_type': 'module_entry', 'start_addr': '0x401000', 'apis': apis, 'error': {}},
            {'ep_type': 'thread', 'start_addr': '0x50000', 'apis': apis[:2],
             'error': {'type': 'unsupported_api', 'api_name': 'ntdll.NtQueueApcThread', 'pc': '0x5002a'}},
        ],
    }
    return json.dumps(payload, indent=2).encode('utf-8')


def test_fuzz_corpus(pe_bytes):
    rng = np.random.default_rng(0)
    featurizer = StaticFeaturizer()
    report = emulation_report_document()
    assert len(parse_report(report).api_calls) == 7
    sources = {'pe': pe_bytes, 'report': report}
    exercised, parsed = set(), set()
    for _ in range(10_000):
        name = ('pe', 'report')[int(rng.integers(2))]
        source = sources[name]
        kind = ('truncate', 'flip', 'random', 'drop')[int(rng.integers(4))]
        if kind == 'truncate':
            data = source[:int(rng.integers(0, len(source) + 1))]
        elif kind == 'flip':
            flipped = bytearray(source)
            for at in rng.integers(0, len(flipped), size=int(rng.integers(1, 9))):
                flipped[at] = int(rng.integers(256))
            data = bytes(flipped)
        elif kind == 'random':
            data = rng.integers(0, 256, size=int(rng.integers(0, 2048)), dtype=np.uint8).tobytes()
        else:
            start = int(rng.integers(0, len(source)))
            data = source[:start] + source[start + int(rng.integers(1, 64)):]
        exercised.add((name, kind))
        assert np.isfinite(featurizer.encode(data)).all()
        try:
            parse_report(data)
            parsed.add((name, kind))
        except DataError:
            pass
    assert len(exercised) == 8
    # single-byte flips inside string values leave the document valid
    assert ('report', 'flip') in parsed
