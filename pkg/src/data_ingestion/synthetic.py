"""
Synthetic labeled corpus with planted per-modality and cross-modality signals
"""
import hashlib
import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from src.data_ingestion.manifest import CLEAN_FAMILY, SPLITS, SampleRecord, write_manifest
from src.featurizers.apiseq_featurizer import EmulationReport, serialize_report
from src.utils.errors import GenerationError
from src.utils.helpers import ensure_dir

logger = logging.getLogger(__name__)

MALWARE_FAMILIES = ('backdoor', 'coinminer', 'dropper', 'keylogger', 'ransomware', 'rat', 'trojan')
SAMPLE_KINDS = ('benign', 'decoy', 'single', 'cross')
MANIFEST_FILE = 'manifest.tsv'
GROUND_TRUTH_FILE = 'ground_truth.csv'
REPORTS_DIR = 'reports'
BINARIES_DIR = 'binaries'
GROUND_TRUTH_COLUMNS = [
    'sample_id', 'split', 'label', 'family', 'kind',
    'path_marker', 'api_marker', 'static_marker', 'emulation_ok',
]

USERS = ('alice', 'bob', 'jdoe', 'mgarcia', 'kevin', 'operator', 'svc_build', 'lena')
VENDORS = ('Mozilla Firefox', 'Adobe', 'Notepad++', '7-Zip', 'VideoLAN', 'Git', 'Python311', 'Zoom')
WORDS = ('reports', 'invoices', 'setup', 'tools', 'archive', 'projects', 'drivers', 'backup', 'media')
NAMES = ('setup', 'update', 'install', 'launcher', 'helper', 'client', 'agent', 'viewer', 'sync', 'service')
EXTENSIONS = ('exe', 'exe', 'exe', 'dll', 'scr')
HOSTS = ('fileserver', 'nas01', 'corp-share')

BENIGN_PATH_TEMPLATES = (
    '{drive}:\\Program Files\\{vendor}\\{name}.exe',
    '{drive}:\\Program Files (x86)\\{vendor}\\bin\\{name}.exe',
    '{drive}:\\Users\\{user}\\Documents\\{word}\\{name}.{ext}',
    '{drive}:\\Users\\{user}\\Downloads\\{name}_{digits}.{ext}',
    '%PROGRAMFILES%\\{vendor}\\{name}.exe',
    '\\\\{host}\\share\\{word}\\{name}.{ext}',
    '{drive}:/Windows/System32/{name}{digits}.exe',
)
# Only ever seen on malicious samples
SINGLE_PATH_MARKERS = (
    '{drive}:\\Users\\{user}\\AppData\\Local\\Temp\\RarSFX{digit}\\{name}.exe',
    '%APPDATA%\\{hex}\\{name}.exe',
    '{drive}:\\$Recycle.Bin\\S-1-5-21-{digits}\\{name}.exe',
    '{drive}:\\Users\\Public\\Libraries\\{name}.scr',
)
# Each carried by malicious cross samples and, alone, by as many benign decoys
CROSS_PATH_MARKERS = (
    '{drive}:\\PerfLogs\\Admin\\{word}\\{name}.exe',
    '{drive}:\\Users\\{user}\\Music\\iTunes\\{name}.exe',
    '{drive}:\\Windows\\Tasks\\{word}\\{name}.exe',
    '{drive}:\\Users\\{user}\\Videos\\Captures\\{name}.exe',
)

BENIGN_APIS = (
    'kernel32.GetModuleHandleW', 'kernel32.GetProcAddress', 'kernel32.LoadLibraryW', 'kernel32.GetLastError',
    'kernel32.HeapAlloc', 'kernel32.HeapFree', 'kernel32.GetProcessHeap', 'kernel32.GetCurrentProcess',
    'kernel32.GetCurrentThreadId', 'kernel32.GetTickCount', 'kernel32.QueryPerformanceCounter',
    'kernel32.GetSystemTimeAsFileTime', 'kernel32.InitializeCriticalSection', 'kernel32.EnterCriticalSection',
    'kernel32.LeaveCriticalSection', 'kernel32.TlsAlloc', 'kernel32.TlsGetValue', 'kernel32.TlsSetValue',
    'kernel32.GetStartupInfoW', 'kernel32.GetCommandLineW', 'kernel32.GetEnvironmentStringsW',
    'kernel32.FreeEnvironmentStringsW', 'kernel32.GetStdHandle', 'kernel32.GetFileType', 'kernel32.CreateFileW',
    'kernel32.ReadFile', 'kernel32.WriteFile', 'kernel32.CloseHandle', 'kernel32.GetFileSize',
    'kernel32.SetFilePointer', 'kernel32.GetModuleFileNameW', 'kernel32.MultiByteToWideChar',
    'kernel32.WideCharToMultiByte', 'kernel32.GetACP', 'kernel32.GetCPInfo', 'kernel32.IsProcessorFeaturePresent',
    'kernel32.VirtualAlloc', 'kernel32.VirtualFree', 'kernel32.Sleep', 'kernel32.ExitProcess',
    'kernel32.GetVersionExW', 'kernel32.GetSystemInfo', 'kernel32.FindFirstFileW', 'kernel32.FindClose',
    'user32.GetSystemMetrics', 'user32.LoadIconW', 'user32.LoadCursorW', 'user32.RegisterClassExW',
    'user32.CreateWindowExW', 'user32.ShowWindow', 'user32.UpdateWindow', 'user32.GetMessageW',
    'user32.TranslateMessage', 'user32.DispatchMessageW', 'user32.MessageBoxW', 'user32.DefWindowProcW',
    'gdi32.GetStockObject', 'gdi32.CreateFontIndirectW', 'gdi32.SelectObject', 'gdi32.DeleteObject',
    'msvcrt.malloc', 'msvcrt.free', 'msvcrt.memset', 'msvcrt.memcpy', 'msvcrt._initterm',
    'ole32.CoInitializeEx', 'ole32.CoCreateInstance', 'ole32.CoUninitialize',
)
SINGLE_API_MARKERS = (
    ('kernel32.VirtualAllocEx', 'kernel32.WriteProcessMemory', 'kernel32.CreateRemoteThread'),
    ('advapi32.CryptAcquireContextW', 'advapi32.CryptEncrypt', 'kernel32.MoveFileExW'),
    ('user32.SetWindowsHookExW', 'user32.GetAsyncKeyState', 'user32.GetForegroundWindow'),
    ('ntdll.NtUnmapViewOfSection', 'kernel32.SetThreadContext', 'kernel32.ResumeThread'),
)
CROSS_API_MARKERS = (
    ('advapi32.RegOpenKeyExW', 'advapi32.RegSetValueExW', 'advapi32.RegCloseKey'),
    ('wininet.InternetOpenA', 'wininet.InternetConnectA', 'wininet.HttpSendRequestA'),
    ('ws2_32.WSAStartup', 'ws2_32.connect', 'ws2_32.send'),
    ('advapi32.OpenSCManagerW', 'advapi32.CreateServiceW', 'advapi32.StartServiceW'),
)
EMULATION_ERRORS = ('unsupported_api', 'invalid_read', 'invalid_write', 'timeout')


class SynthSpec(BaseModel):
    """Generator parameters; *_strength is the chance a single-signal malicious sample carries that marker"""

    train_benign: int = Field(2000, ge=1)
    train_malicious: int = Field(2000, ge=1)
    valid_benign: int = Field(500, ge=1)
    valid_malicious: int = Field(500, ge=1)
    test_benign: int = Field(500, ge=1)
    test_malicious: int = Field(500, ge=1)
    seed: int = 0
    path_strength: float = Field(0.9, ge=0.0, le=1.0)
    api_strength: float = Field(0.9, ge=0.0, le=1.0)
    static_strength: float = Field(0.9, ge=0.0, le=1.0)
    cross_fraction: float = Field(0.5, ge=0.0, le=1.0)
    cross_pairs: int = 2
    emulation_error_rate: float = Field(0.05, ge=0.0, le=1.0)
    binary_size: int = Field(4096, ge=256)
    min_calls: int = Field(30, ge=1)
    max_calls: int = Field(120, ge=1)

    @model_validator(mode='after')
    def _call_range(self) -> 'SynthSpec':
        if self.max_calls < self.min_calls:
            raise ValueError(f"max_calls {self.max_calls} < min_calls {self.min_calls}")
        return self

    def counts(self, split: str) -> Tuple[int, int]:
        return getattr(self, f"{split}_benign"), getattr(self, f"{split}_malicious")

    def cross_count(self, malicious: int) -> int:
        """Cross samples per split, rounded down to a multiple of the pair count"""
        return self.cross_pairs * int(self.cross_fraction * malicious // self.cross_pairs)


class PlannedSample(NamedTuple):
    sample_id: str
    split: str
    label: int
    family: str
    kind: str
    path_marker: Optional[int]
    api_marker: Optional[int]
    static_marker: bool


class SynthResult(NamedTuple):
    root: Path
    manifest_path: Path
    records: List[SampleRecord]
    ground_truth: pd.DataFrame


def check_feasible(spec: SynthSpec) -> None:
    """Raise GenerationError when the requested exclusivity cannot be planted"""
    if spec.cross_pairs < 1:
        raise GenerationError(f"cross_pairs must be at least 1, got {spec.cross_pairs}")
    pool = min(len(CROSS_PATH_MARKERS), len(CROSS_API_MARKERS))
    if spec.cross_pairs > pool:
        raise GenerationError(f"cross_pairs {spec.cross_pairs} exceeds the pattern pool of {pool}")
    for split in SPLITS:
        benign, malicious = spec.counts(split)
        cross = spec.cross_count(malicious)
        if 2 * cross > benign:
            raise GenerationError(
                f"{split}: {cross} cross samples need {2 * cross} benign decoys (one per marker), "
                f"only {benign} benign requested")


def _sample_id(seed: int, split: str, index: int) -> str:
    return hashlib.sha256(f"qv-synth:{seed}:{split}:{index}".encode('utf-8')).hexdigest()


def plan_split(spec: SynthSpec, split: str, rng: np.random.Generator) -> List[PlannedSample]:
    """
    Decide kind, family and marker placement of every sample in one split

    A cross sample carries path marker k and API marker k. For each one, a
    benign decoy carries path marker k alone and another carries API marker k
    alone, so either marker by itself is malicious exactly half the time.
    """
    benign, malicious = spec.counts(split)
    cross = spec.cross_count(malicious)
    pairs = spec.cross_pairs
    planned: List[PlannedSample] = []
    index = 0

    cross_markers = [t % pairs for t in range(cross)]
    decoys = [(k, None) for k in cross_markers] + [(None, k) for k in cross_markers]
    for t in range(benign):
        sid = _sample_id(spec.seed, split, index)
        index += 1
        if t < len(decoys):
            path_marker, api_marker = decoys[t]
            planned.append(PlannedSample(sid, split, 0, CLEAN_FAMILY, 'decoy', path_marker, api_marker, False))
        else:
            planned.append(PlannedSample(sid, split, 0, CLEAN_FAMILY, 'benign', None, None, False))

    for t in range(malicious):
        sid = _sample_id(spec.seed, split, index)
        index += 1
        family = MALWARE_FAMILIES[t % len(MALWARE_FAMILIES)]
        if t < cross:
            planned.append(PlannedSample(sid, split, 1, family, 'cross', cross_markers[t], cross_markers[t], False))
            continue
        path_marker = int(rng.integers(len(SINGLE_PATH_MARKERS))) if rng.random() < spec.path_strength else None
        api_marker = int(rng.integers(len(SINGLE_API_MARKERS))) if rng.random() < spec.api_strength else None
        static_marker = bool(rng.random() < spec.static_strength)
        planned.append(PlannedSample(sid, split, 1, family, 'single', path_marker, api_marker, static_marker))

    return [planned[i] for i in rng.permutation(len(planned))]


def _fill(template: str, rng: np.random.Generator) -> str:
    def pick(pool: Sequence[str]) -> str:
        return pool[int(rng.integers(len(pool)))]

    return template.format(
        drive='CD'[int(rng.random() < 0.15)],
        vendor=pick(VENDORS),
        user=pick(USERS),
        word=pick(WORDS),
        name=pick(NAMES),
        ext=pick(EXTENSIONS),
        host=pick(HOSTS),
        digit=int(rng.integers(10)),
        digits=int(rng.integers(1000, 99999)),
        hex=f"{int(rng.integers(1 << 32)):08x}",
    )


def make_path(sample: PlannedSample, rng: np.random.Generator) -> str:
    if sample.path_marker is None:
        template = BENIGN_PATH_TEMPLATES[int(rng.integers(len(BENIGN_PATH_TEMPLATES)))]
    elif sample.kind in ('cross', 'decoy'):
        template = CROSS_PATH_MARKERS[sample.path_marker]
    else:
        template = SINGLE_PATH_MARKERS[sample.path_marker]
    return _fill(template, rng)


def _api_weights() -> np.ndarray:
    # Zipf-like so vocabulary coverage grows with diminishing returns
    ranks = np.arange(1, len(BENIGN_APIS) + 1, dtype=np.float64)
    weights = 1.0 / ranks
    return weights / weights.sum()


def make_api_calls(sample: PlannedSample, spec: SynthSpec, rng: np.random.Generator,
                   weights: np.ndarray) -> List[str]:
    length = int(rng.integers(spec.min_calls, spec.max_calls + 1))
    calls = [BENIGN_APIS[i] for i in rng.choice(len(BENIGN_APIS), size=length, p=weights)]
    if sample.api_marker is None:
        return calls
    if sample.kind in ('cross', 'decoy'):
        marker = CROSS_API_MARKERS[sample.api_marker]
    else:
        marker = SINGLE_API_MARKERS[sample.api_marker]
    # Keep the marker well inside the truncation window
    at = int(rng.integers(0, min(length, 40) + 1))
    return calls[:at] + list(marker) + calls[at:]


def _byte_probabilities() -> np.ndarray:
    weights = np.full(256, 0.2)
    weights[0x20:0x7f] = 4.0
    weights[0x00] = 60.0
    weights[0xff] = 6.0
    return weights / weights.sum()


def make_binary(sample: PlannedSample, spec: SynthSpec, rng: np.random.Generator,
                probabilities: np.ndarray) -> bytes:
    body = rng.choice(256, size=spec.binary_size, p=probabilities).astype(np.uint8)
    if sample.static_marker:
        # Packed-looking high-entropy payload over half the file
        span = spec.binary_size // 2
        start = int(rng.integers(0, spec.binary_size - span + 1))
        body[start:start + span] = rng.integers(0, 256, size=span, dtype=np.uint8)
    body[:2] = (0x4D, 0x5A)
    return body.tobytes()


def _ground_truth_row(sample: PlannedSample, emulation_ok: bool) -> Dict:
    def marker(kind: str, value: Optional[int]) -> str:
        if value is None:
            return ''
        return f"{'cross' if sample.kind in ('cross', 'decoy') else 'single'}-{kind}{value}"

    return {
        'sample_id': sample.sample_id,
        'split': sample.split,
        'label': sample.label,
        'family': sample.family,
        'kind': sample.kind,
        'path_marker': marker('p', sample.path_marker),
        'api_marker': marker('a', sample.api_marker),
        'static_marker': int(sample.static_marker),
        'emulation_ok': int(emulation_ok),
    }


def generate_corpus(spec: SynthSpec, out_dir: Union[str, Path]) -> SynthResult:
    """
    Write a labeled corpus: one emulation report and one binary per sample,
    a manifest and the ground-truth marker placements

    Args:
        spec: Generator parameters
        out_dir: Output directory, created if missing

    Returns:
        SynthResult; the same spec always produces byte-identical files
    """
    check_feasible(spec)
    root = ensure_dir(out_dir)
    reports_dir = ensure_dir(root / REPORTS_DIR)
    binaries_dir = ensure_dir(root / BINARIES_DIR)
    rng = np.random.default_rng(spec.seed)
    weights = _api_weights()
    probabilities = _byte_probabilities()

    records: List[SampleRecord] = []
    truth: List[Dict] = []
    for split in SPLITS:
        for sample in plan_split(spec, split, rng):
            raw_path = make_path(sample, rng)
            calls = make_api_calls(sample, spec, rng, weights)
            emulation_ok = not rng.random() < spec.emulation_error_rate
            if emulation_ok:
                report = EmulationReport(sample_id=sample.sample_id, api_calls=calls, family=sample.family)
            else:
                kind = EMULATION_ERRORS[int(rng.integers(len(EMULATION_ERRORS)))]
                report = EmulationReport(sample_id=sample.sample_id, status='error', error_kind=kind,
                                         family=sample.family)
            report_rel = f"{REPORTS_DIR}/{sample.sample_id}.json"
            binary_rel = f"{BINARIES_DIR}/{sample.sample_id}.bin"
            (reports_dir / f"{sample.sample_id}.json").write_bytes(serialize_report(report))
            (binaries_dir / f"{sample.sample_id}.bin").write_bytes(make_binary(sample, spec, rng, probabilities))

            records.append(SampleRecord(
                sample_id=sample.sample_id,
                filepath=raw_path,
                report_path=report_rel,
                pe_path=binary_rel,
                label=sample.label,
                family=sample.family,
                split=split,
            ))
            truth.append(_ground_truth_row(sample, emulation_ok))

    manifest_path = write_manifest(records, root / MANIFEST_FILE)
    ground_truth = pd.DataFrame(truth, columns=GROUND_TRUTH_COLUMNS)
    ground_truth.to_csv(root / GROUND_TRUTH_FILE, index=False)

    kinds = ground_truth['kind'].value_counts().to_dict()
    logger.info(f"✅ Synthetic corpus: {len(records)} samples in {root} ({kinds})")
    return SynthResult(root, manifest_path, records, ground_truth)


def load_ground_truth(root: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(Path(root) / GROUND_TRUTH_FILE, dtype={'path_marker': str, 'api_marker': str},
                        keep_default_na=False)
    return frame[GROUND_TRUTH_COLUMNS]


def marker_balance(ground_truth: pd.DataFrame, column: str) -> pd.DataFrame:
    """
    Malicious share per planted marker of one modality

    Args:
        ground_truth: Frame as written by generate_corpus
        column: 'path_marker' or 'api_marker'

    Returns:
        DataFrame indexed by marker with benign, malicious and malicious_share columns
    """
    marked = ground_truth[ground_truth[column] != '']
    table = pd.crosstab(marked[column], marked['label']).reindex(columns=[0, 1], fill_value=0)
    table.columns = ['benign', 'malicious']
    table['malicious_share'] = table['malicious'] / (table['benign'] + table['malicious'])
    return table


def pair_exclusivity(ground_truth: pd.DataFrame) -> pd.DataFrame:
    """
    Malicious share per (path marker, api marker) combination over cross and
    decoy samples; '-' stands for an absent marker
    """
    paired = ground_truth[ground_truth['kind'].isin(['cross', 'decoy'])]
    pair = paired['path_marker'].replace('', '-') + '|' + paired['api_marker'].replace('', '-')
    table = pd.crosstab(pair, paired['label']).reindex(columns=[0, 1], fill_value=0)
    table.columns = ['benign', 'malicious']
    table['malicious_share'] = table['malicious'] / (table['benign'] + table['malicious'])
    return table
