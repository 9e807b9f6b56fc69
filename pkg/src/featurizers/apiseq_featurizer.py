"""
Emulation report parsing and API-call sequence encoding
Consumes a JSON subset of Speakeasy reports: top-level `entry_points`, each
holding an ordered `apis` list of {"api_name": ...} records and an optional
`error` record
"""
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, model_validator

from src.featurizers.sequences import PAD_ID, RARE_ID, RESERVED_IDS, TokenSequence, pad_truncate
from src.utils.errors import InputError, ReportParseError, SchemaError
from src.utils.helpers import config_digest, ensure_dir

logger = logging.getLogger(__name__)

DEFAULT_API_VOCAB_SIZE = 600
DEFAULT_API_LENGTH = 150
API_VOCAB_HEADER = 'qv-api-vocab'
VOCAB_FORMAT_VERSION = 1
NO_CALLS_ERROR = 'no_api_calls'
COVERAGE_GRID = (100, 150, 200, 300, 400, 500, 600, 700)
UNLABELED_FAMILY = 'unlabeled'


class EmulationReport(BaseModel):
    """One emulated sample; status is 'success' exactly when at least one API call was recorded"""

    sample_id: str
    status: str = 'success'
    error_kind: Optional[str] = None
    api_calls: List[str] = []
    family: Optional[str] = None

    @model_validator(mode='after')
    def _check_status(self) -> 'EmulationReport':
        expected = 'success' if self.api_calls else 'error'
        if self.status != expected:
            raise ValueError(f"status {self.status!r} inconsistent with {len(self.api_calls)} api calls")
        if self.status == 'error' and not self.error_kind:
            self.error_kind = NO_CALLS_ERROR
        if self.status == 'success':
            self.error_kind = None
        return self


def normalize_api_name(name: str) -> str:
    """`KERNEL32.CreateFileW` -> `createfilew`"""
    lowered = name.lower()
    return lowered.rsplit('.', 1)[-1] or lowered


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode('utf-8'))


def parse_report(document: bytes, source: Optional[str] = None) -> EmulationReport:
    """
    Parse one report document

    Args:
        document: Raw UTF-8 JSON bytes
        source: File name used in diagnostics and as the fallback sample id

    Returns:
        EmulationReport with normalized API names in emission order
    """
    where = f"{source}: " if source else ''
    try:
        text = document.decode('utf-8')
    except UnicodeDecodeError as e:
        raise ReportParseError(f"{where}invalid UTF-8 at byte {e.start}", offset=e.start)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        offset = _byte_offset(text, e.pos)
        raise ReportParseError(f"{where}malformed JSON at byte {offset}: {e.msg}", offset=offset)
    except RecursionError:
        raise ReportParseError(f"{where}JSON nesting too deep", offset=None)
    except ValueError as e:
        raise ReportParseError(f"{where}unreadable JSON: {e}", offset=None)

    if not isinstance(payload, dict):
        raise SchemaError(f"{where}report must be a JSON object, got {type(payload).__name__}")
    entry_points = payload.get('entry_points')
    if not isinstance(entry_points, list):
        raise SchemaError(f"{where}missing 'entry_points' list")

    calls: List[str] = []
    error_kind: Optional[str] = None
    for ep_index, entry_point in enumerate(entry_points):
        if not isinstance(entry_point, dict) or not isinstance(entry_point.get('apis'), list):
            raise SchemaError(f"{where}entry point {ep_index} has no 'apis' list")
        for call_index, call in enumerate(entry_point['apis']):
            name = call.get('api_name') if isinstance(call, dict) else None
            if not isinstance(name, str):
                raise SchemaError(f"{where}entry point {ep_index} call {call_index} has no 'api_name'")
            calls.append(normalize_api_name(name))
        error = entry_point.get('error')
        if error_kind is None and isinstance(error, dict) and isinstance(error.get('type'), str):
            error_kind = error['type']

    sample_id = payload.get('sample_id') or payload.get('sha256') or (Path(source).stem if source else '')
    family = payload.get('family')
    return EmulationReport(
        sample_id=str(sample_id),
        status='success' if calls else 'error',
        error_kind=None if calls else error_kind,
        api_calls=calls,
        family=str(family) if family is not None else None,
    )


def serialize_report(report: EmulationReport) -> bytes:
    """Inverse of parse_report on the accepted schema subset"""
    entry_point: Dict = {
        'ep_type': 'module_entry',
        'apis': [{'api_name': name} for name in report.api_calls],
    }
    if report.status == 'error':
        entry_point['error'] = {'type': report.error_kind}
    payload: Dict = {'sample_id': report.sample_id, 'entry_points': [entry_point]}
    if report.family is not None:
        payload['family'] = report.family
    return json.dumps(payload, indent=2, sort_keys=True).encode('utf-8')


def _load_one(path: Path) -> EmulationReport:
    return parse_report(path.read_bytes(), source=str(path))


def load_reports(source: Union[str, Path, Sequence[Union[str, Path]]], jobs: int = 1) -> List[EmulationReport]:
    """
    Parse every report of a directory (`*.json`, sorted by name) or an explicit path list

    Args:
        source: Directory or list of files
        jobs: joblib worker count

    Returns:
        Reports in input order
    """
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        paths = sorted(Path(source).glob('*.json'))
    elif isinstance(source, (str, Path)):
        paths = [Path(source)]
    else:
        paths = [Path(p) for p in source]

    logger.info(f"Parsing {len(paths)} emulation reports (jobs={jobs})")
    reports = Parallel(n_jobs=jobs)(delayed(_load_one)(path) for path in paths)
    return list(reports)


class ApiVocab:
    """
    API name -> token id; id 0 is padding, id 1 is not-in-vocabulary

    Args:
        names: Names in id order (first gets id 2)
        capacity: Number of name slots; the embedding table has capacity + 2 rows
    """

    def __init__(self, names: List[str], capacity: int):
        if capacity < 1:
            raise InputError(f"API vocabulary capacity must be >= 1, got {capacity}")
        if len(names) > capacity:
            raise InputError(f"{len(names)} names exceed vocabulary capacity {capacity}")
        self.names = list(names)
        self.capacity = capacity
        self.index = {name: RESERVED_IDS + offset for offset, name in enumerate(self.names)}

    @property
    def size(self) -> int:
        return self.capacity + RESERVED_IDS

    def lookup(self, calls: Iterable[str]) -> List[int]:
        return [self.index.get(name, RARE_ID) for name in calls]

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, ApiVocab) and (self.names, self.capacity) == (other.names, other.capacity)

    def __repr__(self):
        return f"ApiVocab(names={len(self.names)}, capacity={self.capacity})"


def _successful(reports: Iterable[EmulationReport]) -> List[EmulationReport]:
    return [report for report in reports if report.status == 'success']


def _call_counts(reports: Iterable[EmulationReport]) -> Counter:
    counts: Counter = Counter()
    for report in _successful(reports):
        counts.update(report.api_calls)
    return counts


def _ranked(counts: Counter) -> List[str]:
    return [name for name, _ in sorted(counts.items(), key=lambda item: (-item[1], item[0]))]


def build_api_vocab(reports: Iterable[EmulationReport], v: int = DEFAULT_API_VOCAB_SIZE) -> ApiVocab:
    """
    Keep the v most frequent API names of the successful reports

    Ties in total occurrence count are ordered lexicographically.
    """
    reports = list(reports)
    if v < 1:
        raise InputError(f"vocabulary size must be >= 1, got {v}")
    if not _successful(reports):
        raise InputError("cannot build an API vocabulary without a successful report")
    return ApiVocab(_ranked(_call_counts(reports))[:v], capacity=v)


def vocab_coverage(vocab: ApiVocab, reports: Iterable[EmulationReport]) -> float:
    """Percentage of call occurrences whose name is in the vocabulary"""
    reports = list(reports)
    if not reports:
        raise InputError("coverage of an empty corpus is undefined")
    counts = _call_counts(reports)
    total = sum(counts.values())
    if total == 0:
        logger.warning("⚠️  Corpus holds no API calls, coverage reported as 0")
        return 0.0
    covered = sum(count for name, count in counts.items() if name in vocab)
    return 100.0 * covered / total


def coverage_table(reports: Iterable[EmulationReport], v_grid: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Coverage at each vocabulary size of a grid, plus at the distinct-call count

    Returns:
        DataFrame with columns top_v, coverage_pct sorted by top_v
    """
    reports = list(reports)
    counts = _call_counts(reports)
    grid = set(COVERAGE_GRID if v_grid is None else v_grid)
    grid.add(len(counts))
    rows = []
    for v in sorted(g for g in grid if g >= 1):
        vocab = ApiVocab(_ranked(counts)[:v], capacity=v)
        rows.append({'top_v': v, 'coverage_pct': vocab_coverage(vocab, reports)})
    return pd.DataFrame(rows, columns=['top_v', 'coverage_pct'])


def encode_apiseq(report: EmulationReport, vocab: ApiVocab, n: int = DEFAULT_API_LENGTH) -> TokenSequence:
    """
    Label-encode the call prefix of a successful report

    Raises:
        InputError: report has error status
    """
    if report.status != 'success':
        raise InputError(f"{report.sample_id}: cannot encode an error-status report ({report.error_kind})")
    return pad_truncate(vocab.lookup(report.api_calls[:n]), n)._replace(true_length=len(report.api_calls))


def categorize_error(kind: Optional[str]) -> str:
    """Collapse emulator error strings into a handful of reasons"""
    text = (kind or NO_CALLS_ERROR).lower()
    if text == NO_CALLS_ERROR:
        return NO_CALLS_ERROR
    if 'unsupported' in text:
        return 'unsupported_api'
    if 'read' in text:
        return 'invalid_memory_read'
    if 'write' in text:
        return 'invalid_memory_write'
    return 'other'


class EmulationStats(NamedTuple):
    per_family: pd.DataFrame
    distinct_apis: int
    error_kinds: pd.DataFrame


def emulation_stats(reports: Iterable[EmulationReport]) -> EmulationStats:
    """
    Success/error counts per family and in total, the distinct-API count,
    and error reports tallied by reason
    """
    reports = list(reports)
    frame = pd.DataFrame({
        'family': [report.family or UNLABELED_FAMILY for report in reports],
        'success': [int(report.status == 'success') for report in reports],
        'error': [int(report.status == 'error') for report in reports],
        'error_kind': [categorize_error(report.error_kind) if report.status == 'error' else '' for report in reports],
    })

    per_family = frame.groupby('family', sort=True)[['success', 'error']].sum().reset_index()
    total = pd.DataFrame([{
        'family': 'total',
        'success': int(frame['success'].sum()),
        'error': int(frame['error'].sum()),
    }])
    per_family = pd.concat([per_family, total], ignore_index=True)
    attempts = per_family['success'] + per_family['error']
    per_family['error_ratio'] = np.where(attempts > 0, per_family['error'] / attempts.where(attempts > 0, 1), 0.0)

    errors = frame[frame['error'] == 1]
    error_kinds = (
        errors.groupby(['family', 'error_kind'], sort=True).size().reset_index(name='count')
        if len(errors) else pd.DataFrame(columns=['family', 'error_kind', 'count'])
    )

    distinct = set()
    for report in reports:
        distinct.update(report.api_calls)

    logger.info(f"📊 Emulation: {int(total['success'][0])} successful, {int(total['error'][0])} failed, "
                f"{len(distinct)} distinct APIs")
    return EmulationStats(per_family=per_family, distinct_apis=len(distinct), error_kinds=error_kinds)


def save_api_vocab(vocab: ApiVocab, path: Union[str, Path]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    lines = [f"# {API_VOCAB_HEADER} v{VOCAB_FORMAT_VERSION} capacity={vocab.capacity} pad={PAD_ID} rare={RARE_ID}"]
    for name in vocab.names:
        if '\t' in name or '\n' in name or '\r' in name:
            raise InputError(f"API name {name!r} cannot be stored in a vocabulary file")
        lines.append(f"{name}\t{vocab.index[name]}")
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def load_api_vocab(path: Union[str, Path]) -> ApiVocab:
    lines = Path(path).read_text(encoding='utf-8').split('\n')
    header = lines[0].lstrip('#').split()
    if len(header) < 2 or header[0] != API_VOCAB_HEADER or header[1] != f"v{VOCAB_FORMAT_VERSION}":
        raise InputError(f"{path}: not a {API_VOCAB_HEADER} v{VOCAB_FORMAT_VERSION} file")
    fields = dict(part.split('=', 1) for part in header[2:])
    if int(fields.get('pad', -1)) != PAD_ID or int(fields.get('rare', -1)) != RARE_ID:
        raise InputError(f"{path}: reserved ids differ from pad={PAD_ID} rare={RARE_ID}")

    names: List[str] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        name, sep, token = line.rpartition('\t')
        if not sep or not token.isdigit() or int(token) != RESERVED_IDS + len(names):
            raise InputError(f"{path}: line {line_no}: expected api_name<TAB>token_id with contiguous ids")
        names.append(name)
    return ApiVocab(names, capacity=int(fields['capacity']))


class ApiFeaturizer:
    """
    Report -> fixed-length API token sequence

    Args:
        vocab: API vocabulary fitted on training reports
        n: Sequence length
    """

    def __init__(self, vocab: ApiVocab, n: int = DEFAULT_API_LENGTH):
        self.vocab = vocab
        self.n = n

    @classmethod
    def fit(cls, reports: Iterable[EmulationReport], v: int = DEFAULT_API_VOCAB_SIZE,
            n: int = DEFAULT_API_LENGTH) -> 'ApiFeaturizer':
        reports = list(reports)
        vocab = build_api_vocab(reports, v)
        logger.info(f"✅ API vocabulary: {len(vocab.names)} names, "
                    f"coverage {vocab_coverage(vocab, reports):.2f}%")
        return cls(vocab, n=n)

    def encode(self, report: EmulationReport) -> TokenSequence:
        return encode_apiseq(report, self.vocab, self.n)

    def encode_batch(self, reports: Iterable[EmulationReport]) -> np.ndarray:
        rows = [self.encode(report).ids for report in reports]
        return np.stack(rows) if rows else np.zeros((0, self.n), dtype=np.int64)

    def config_hash(self) -> str:
        return config_digest({
            'kind': 'api',
            'n': self.n,
            'capacity': self.vocab.capacity,
            'names': self.vocab.names,
        })
