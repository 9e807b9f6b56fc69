"""
Encoded dataset: manifest records turned into per-module model inputs
"""
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.data_ingestion.manifest import SampleRecord
from src.featurizers.apiseq_featurizer import EmulationReport, parse_report
from src.featurizers.bundle import FeaturizerBundle
from src.featurizers.static_featurizer import read_static_vectors
from src.utils.errors import CompatibilityError, DataError, DimensionError, InputError
from src.utils.helpers import ensure_dir, read_json, write_json

logger = logging.getLogger(__name__)

ENCODED_FILE = 'encoded.json'
META_FILE = 'meta.csv'
ARRAY_NAMES = ('fp', 'api', 'api_available', 'emb', 'emb_available')


class EncodedDataset:
    """
    Model inputs for a set of samples, aligned by row

    Args:
        sample_ids, labels, families, splits: Per-row metadata
        fp: (n, path_length) int64 token ids
        api: (n, api_length) int64 token ids; zero rows where emulation failed
        api_available: Rows with a successful emulation report
        emb: (n, dim) float32 static vectors
        emb_available: Rows with a binary or a precomputed static vector
    """

    def __init__(self, sample_ids: Sequence[str], labels: np.ndarray, families: Sequence[Optional[str]],
                 splits: Sequence[Optional[str]], fp: np.ndarray, api: np.ndarray, api_available: np.ndarray,
                 emb: np.ndarray, emb_available: Optional[np.ndarray] = None,
                 featurizer_hashes: Optional[Mapping[str, str]] = None):
        self.sample_ids = list(sample_ids)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.families = np.asarray([f or '' for f in families], dtype=object)
        self.splits = np.asarray([s or '' for s in splits], dtype=object)
        self.fp = np.asarray(fp, dtype=np.int64)
        self.api = np.asarray(api, dtype=np.int64)
        self.api_available = np.asarray(api_available, dtype=bool)
        self.emb = np.asarray(emb, dtype=np.float32)
        n = len(self.sample_ids)
        self.emb_available = (np.ones(n, dtype=bool) if emb_available is None
                              else np.asarray(emb_available, dtype=bool))
        self.featurizer_hashes = dict(featurizer_hashes or {})
        for name in ARRAY_NAMES + ('labels',):
            if getattr(self, name).shape[0] != n:
                raise DimensionError(f"encoded dataset: {name} has {getattr(self, name).shape[0]} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def inputs(self) -> Dict[str, np.ndarray]:
        return {'fp': self.fp, 'api': self.api, 'emb': self.emb}

    @property
    def available(self) -> Dict[str, np.ndarray]:
        return {
            'fp': np.ones(len(self), dtype=bool),
            'api': self.api_available,
            'emb': self.emb_available,
        }

    def take(self, rows: np.ndarray) -> 'EncodedDataset':
        rows = np.asarray(rows, dtype=np.int64)
        return EncodedDataset(
            sample_ids=[self.sample_ids[i] for i in rows],
            labels=self.labels[rows],
            families=list(self.families[rows]),
            splits=list(self.splits[rows]),
            fp=self.fp[rows],
            api=self.api[rows],
            api_available=self.api_available[rows],
            emb=self.emb[rows],
            emb_available=self.emb_available[rows],
            featurizer_hashes=self.featurizer_hashes,
        )

    def split(self, name: str) -> 'EncodedDataset':
        return self.take(np.flatnonzero(self.splits == name))

    def module_pair(self, module_id: str) -> tuple:
        """(inputs, labels) over the rows where the module's modality exists"""
        rows = np.flatnonzero(self.available[module_id])
        return self.inputs[module_id][rows], self.labels[rows]

    def save(self, directory: Union[str, Path]) -> Path:
        directory = ensure_dir(directory)
        for name in ARRAY_NAMES:
            np.save(directory / f"{name}.npy", getattr(self, name), allow_pickle=False)
        pd.DataFrame({
            'sample_id': self.sample_ids,
            'label': self.labels,
            'family': self.families,
            'split': self.splits,
        }).to_csv(directory / META_FILE, index=False)
        write_json(directory / ENCODED_FILE, {
            'samples': len(self),
            'featurizer_hashes': self.featurizer_hashes,
        })
        logger.info(f"✅ Encoded dataset saved: {directory} ({len(self)} samples)")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path], expected_hashes: Optional[Mapping[str, str]] = None) -> 'EncodedDataset':
        directory = Path(directory)
        if not (directory / ENCODED_FILE).exists():
            raise InputError(f"{directory}: no encoded dataset (missing {ENCODED_FILE})")
        meta = read_json(directory / ENCODED_FILE)
        recorded = meta.get('featurizer_hashes', {})
        for module_id, value in (expected_hashes or {}).items():
            if recorded.get(module_id) != value:
                raise CompatibilityError(
                    f"{directory}: inputs encoded with {module_id} featurizer {recorded.get(module_id)}, "
                    f"model expects {value}",
                    expected=value, found=recorded.get(module_id),
                )
        frame = pd.read_csv(directory / META_FILE, dtype={'sample_id': str, 'family': str, 'split': str},
                            keep_default_na=False)
        arrays = {name: np.load(directory / f"{name}.npy", allow_pickle=False) for name in ARRAY_NAMES}
        return cls(
            sample_ids=frame['sample_id'].tolist(),
            labels=frame['label'].to_numpy(),
            families=frame['family'].tolist(),
            splits=frame['split'].tolist(),
            featurizer_hashes=recorded,
            **arrays,
        )


def _resolve(base_dir: Path, ref: str) -> Path:
    path = Path(ref)
    return path if path.is_absolute() else base_dir / path


def _read_report(record: SampleRecord, base_dir: Path) -> Optional[EmulationReport]:
    if not record.report_path:
        return None
    path = _resolve(base_dir, record.report_path)
    if not path.exists():
        raise InputError(f"sample {record.sample_id}: report file {path} not found")
    return parse_report(path.read_bytes(), source=str(path))


def _try_read_report(record: SampleRecord, base_dir: Path) -> Tuple[Optional[EmulationReport], Optional[DataError]]:
    try:
        return _read_report(record, base_dir), None
    except DataError as e:
        return None, e


def load_sample_reports(records: Sequence[SampleRecord], base_dir: Union[str, Path],
                        jobs: int = 1) -> List[Optional[EmulationReport]]:
    """
    Parse each record's report (None where the manifest names none)

    Every failing file is logged before the first failure is raised.
    """
    base_dir = Path(base_dir)
    results = Parallel(n_jobs=jobs)(delayed(_try_read_report)(record, base_dir) for record in records)
    failures = [error for _, error in results if error is not None]
    for error in failures:
        logger.error(f"❌ {error}")
    if failures:
        logger.error(f"❌ {len(failures)} of {len(results)} reports could not be read")
        raise failures[0]
    return [report for report, _ in results]


class _VectorIndex:
    """Precomputed static vector files, loaded once each"""

    def __init__(self, base_dir: Path, dim: int, schema_version: str):
        self.base_dir = base_dir
        self.dim = dim
        self.schema_version = schema_version
        self._files: Dict[Path, Dict[str, np.ndarray]] = {}

    def lookup(self, record: SampleRecord) -> np.ndarray:
        path = _resolve(self.base_dir, record.static_path)
        if path not in self._files:
            if not path.exists():
                raise InputError(f"sample {record.sample_id}: static vector file {path} not found")
            ids, matrix, schema = read_static_vectors(path)
            if matrix.shape[1] != self.dim:
                raise DimensionError(f"{path}: static vectors have dim {matrix.shape[1]}, expected {self.dim}")
            if schema != self.schema_version:
                logger.warning(f"⚠️  {path}: schema {schema} differs from {self.schema_version}")
            self._files[path] = dict(zip(ids, matrix))
        vectors = self._files[path]
        if record.sample_id not in vectors:
            raise InputError(f"sample {record.sample_id}: not present in static vector file {path}")
        return vectors[record.sample_id]


def encode_dataset(records: Sequence[SampleRecord], bundle: FeaturizerBundle, base_dir: Union[str, Path],
                   reports: Optional[Sequence[Optional[EmulationReport]]] = None, jobs: int = 1) -> EncodedDataset:
    """
    Featurize manifest records with a fitted bundle

    Args:
        records: Manifest records
        bundle: Fitted featurizers
        base_dir: Directory that relative record paths resolve against
        reports: Already parsed reports aligned with records (parsed here when omitted)
        jobs: Worker count for report parsing and static featurization

    Returns:
        EncodedDataset aligned with `records`
    """
    base_dir = Path(base_dir)
    records = list(records)
    if reports is None:
        reports = load_sample_reports(records, base_dir, jobs=jobs)
    n = len(records)

    fp = bundle.path.encode_batch([r.filepath for r in records])

    api = np.zeros((n, bundle.api.n), dtype=np.int64)
    api_available = np.zeros(n, dtype=bool)
    for i, report in enumerate(reports):
        if report is not None and report.status == 'success':
            api[i] = bundle.api.encode(report).ids
            api_available[i] = True

    emb = np.zeros((n, bundle.static.dim), dtype=np.float32)
    emb_available = np.zeros(n, dtype=bool)
    pe_rows = [i for i, r in enumerate(records) if r.pe_path]
    if pe_rows:
        pe_paths = [_resolve(base_dir, records[i].pe_path) for i in pe_rows]
        for i, path in zip(pe_rows, pe_paths):
            if not path.exists():
                raise InputError(f"sample {records[i].sample_id}: binary {path} not found")
        emb[pe_rows] = bundle.static.encode_files(pe_paths, jobs=jobs)
        emb_available[pe_rows] = True
    index = _VectorIndex(base_dir, bundle.static.dim, bundle.static.schema_version)
    for i, record in enumerate(records):
        if not record.pe_path and record.static_path:
            emb[i] = index.lookup(record)
            emb_available[i] = True

    logger.info(f"📊 Encoded {n} samples: api available {int(api_available.sum())}, "
                f"static available {int(emb_available.sum())}")
    return EncodedDataset(
        sample_ids=[r.sample_id for r in records],
        labels=np.array([r.label for r in records], dtype=np.int64),
        families=[r.family for r in records],
        splits=[r.split for r in records],
        fp=fp, api=api, api_available=api_available,
        emb=emb, emb_available=emb_available,
        featurizer_hashes=bundle.hashes(),
    )
