"""
Shared fixtures: a hand-built x86 PE, a tiny synthetic corpus, compact modules and run-config helpers
"""
import struct
from pathlib import Path

import numpy as np
import pytest
import yaml

from src.data_ingestion.synthetic import SynthSpec, generate_corpus
from src.fusion.configs import api_cnn_config, ember_ffnn_config, path_cnn_config
from src.fusion.modules import build_ember_ffnn, build_sequence_cnn
from src.utils.helpers import RUN_MANIFEST_NAME, read_json, sha256_file

TEXT_RVA = 0x1000
IDATA_RVA = 0x2000
IDATA_OFFSET = 0x400
PE_SIZE = 0x600
PE_IMPORTS = ['kernel32.dll:exitprocess']


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow end-to-end tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def build_pe() -> bytes:
    """
    Minimal PE32 executable: .text holding the entry point and .idata
    importing KERNEL32.dll!ExitProcess
    """
    image = bytearray(PE_SIZE)

    # DOS header, e_lfanew at 0x3c
    image[0:2] = b'MZ'
    struct.pack_into('<I', image, 0x3c, 0x40)
    image[0x40:0x44] = b'PE\x00\x00'

    # COFF file header: i386, 2 sections, executable | 32-bit machine
    struct.pack_into('<HHIIIHH', image, 0x44, 0x014c, 2, 1600000000, 0, 0, 0xE0, 0x0102)

    optional = struct.pack(
        '<HBBIIIIIIIIIHHHHHHIIIIHHIIIIII',
        0x10b, 14, 0,           # magic, linker version
        0x200, 0x200, 0,        # code, initialized, uninitialized sizes
        TEXT_RVA, TEXT_RVA, IDATA_RVA,
        0x400000, 0x1000, 0x200,
        6, 0, 0, 0, 6, 0,       # os, image, subsystem versions
        0, 0x3000, 0x200, 0,    # win32 version, image size, headers size, checksum
        3, 0x8140,              # console subsystem, dll characteristics
        0x100000, 0x1000, 0x100000, 0x1000, 0, 16,
    )
    directories = [(0, 0)] * 16
    directories[1] = (IDATA_RVA, 40)
    optional += b''.join(struct.pack('<II', rva, size) for rva, size in directories)
    assert len(optional) == 0xE0
    image[0x58:0x58 + 0xE0] = optional

    sections = 0x58 + 0xE0
    struct.pack_into('<8sIIIIIIHHI', image, sections, b'.text', 0x100, TEXT_RVA, 0x200, 0x200, 0, 0, 0, 0,
                     0x60000020)
    struct.pack_into('<8sIIIIIIHHI', image, sections + 40, b'.idata', 0x100, IDATA_RVA, 0x200, IDATA_OFFSET,
                     0, 0, 0, 0, 0xC0000040)

    image[0x200:0x204] = b'\x6a\x00\xff\xd0'

    def at(rva: int) -> int:
        return IDATA_OFFSET + rva - IDATA_RVA

    # one import descriptor plus the null terminator
    struct.pack_into('<IIIII', image, at(0x2000), 0x2028, 0, 0, 0x2060, 0x2040)
    struct.pack_into('<II', image, at(0x2028), 0x2070, 0)
    struct.pack_into('<II', image, at(0x2040), 0x2070, 0)
    image[at(0x2060):at(0x2060) + 13] = b'KERNEL32.dll\x00'
    image[at(0x2070):at(0x2070) + 14] = b'\x00\x00ExitProcess\x00'
    return bytes(image)


@pytest.fixture(scope='session')
def pe_bytes() -> bytes:
    return build_pe()


def tiny_synth(**overrides) -> SynthSpec:
    values = dict(
        train_benign=16, train_malicious=16,
        valid_benign=8, valid_malicious=8,
        test_benign=8, test_malicious=8,
        seed=0, binary_size=1024, emulation_error_rate=0.2,
    )
    values.update(overrides)
    return SynthSpec(**values)


@pytest.fixture
def tiny_spec() -> SynthSpec:
    return tiny_synth()


@pytest.fixture(scope='session')
def tiny_corpus(tmp_path_factory):
    """Generated once per session; tests must not modify it"""
    return generate_corpus(tiny_synth(), tmp_path_factory.mktemp('tiny_corpus'))


def write_run_config(run_dir: Path, **overrides) -> Path:
    """Compact, one-epoch run configuration over a tiny generated corpus"""
    run_dir = Path(run_dir)
    values = {
        'run_dir': str(run_dir),
        'manifest': str(run_dir / 'corpus' / 'manifest.tsv'),
        'preset': 'compact',
        'seed': 0,
        'epochs': 1,
        'meta_epochs': 1,
        'batch_size': 64,
        'fpr_grid': [0.01, 0.1],
        'log_level': 'WARNING',
        'synth': tiny_synth().model_dump(),
    }
    values.update(overrides)
    path = run_dir.parent / f"{run_dir.name}.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(values), encoding='utf-8')
    return path


@pytest.fixture(scope='session')
def run_config():
    """Factory: run_config(run_dir, **overrides) -> YAML path"""
    return write_run_config


def read_deterministic_outputs(run_dir: Path) -> dict:
    """Files under run_dir the run manifest flags deterministic, as relative path -> sha256 of the bytes on disk"""
    run_dir = Path(run_dir)
    files = read_json(run_dir / RUN_MANIFEST_NAME)['files']
    return {key: sha256_file(run_dir / key) for key, entry in sorted(files.items())
            if entry['deterministic'] and not Path(key).is_absolute()}


@pytest.fixture(scope='session')
def deterministic_outputs():
    return read_deterministic_outputs


def compact_modules(seed: int = 0):
    """Untrained compact fp/api/emb modules over small vocabularies"""
    return {
        'fp': build_sequence_cnn('fp', path_cnn_config('compact', vocab_size=20, seq_length=12), seed=seed),
        'api': build_sequence_cnn('api', api_cnn_config('compact', vocab_size=30, seq_length=10), seed=seed + 1),
        'emb': build_ember_ffnn(ember_ffnn_config('compact', input_dim=24), seed=seed + 2),
    }


def compact_inputs(n: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    return {
        'fp': rng.integers(0, 22, size=(n, 12)),
        'api': rng.integers(0, 32, size=(n, 10)),
        'emb': rng.random((n, 24)).astype(np.float32),
    }


@pytest.fixture(scope='session')
def make_modules():
    return compact_modules


@pytest.fixture(scope='session')
def make_inputs():
    return compact_inputs
