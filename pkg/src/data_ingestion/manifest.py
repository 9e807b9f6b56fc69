"""
Sample manifest: one tab-separated record per line with a header row
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError, field_validator, model_validator
from sklearn.model_selection import train_test_split

from src.utils.errors import ManifestError
from src.utils.helpers import ensure_dir

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ['sample_id', 'filepath', 'report_path', 'pe_path', 'static_path', 'label', 'family', 'split']
SPLITS = ('train', 'valid', 'test')
CLEAN_FAMILY = 'clean'


class SampleRecord(BaseModel):
    """One labeled sample; filesystem references are relative to the manifest directory"""

    sample_id: str
    filepath: str
    report_path: Optional[str] = None
    pe_path: Optional[str] = None
    static_path: Optional[str] = None
    label: int
    family: Optional[str] = None
    split: Optional[str] = None

    @field_validator('label')
    @classmethod
    def _binary(cls, label: int) -> int:
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label}")
        return label

    @field_validator('split')
    @classmethod
    def _known_split(cls, split: Optional[str]) -> Optional[str]:
        if split is not None and split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return split

    @model_validator(mode='after')
    def _family_matches_label(self) -> 'SampleRecord':
        if self.family is not None and (self.family == CLEAN_FAMILY) != (self.label == 0):
            raise ValueError(f"family {self.family!r} contradicts label {self.label}")
        return self

    @property
    def has_static(self) -> bool:
        return bool(self.pe_path or self.static_path)

    @property
    def stratum(self) -> str:
        return self.family or f"label{self.label}"


def _field(value: str) -> Optional[str]:
    value = value.strip()
    return value or None


def parse_manifest_line(line: str, line_no: int) -> SampleRecord:
    parts = line.rstrip('\r\n').split('\t')
    if len(parts) != len(MANIFEST_COLUMNS):
        raise ManifestError(f"expected {len(MANIFEST_COLUMNS)} tab-separated fields, got {len(parts)}", line=line_no)
    values = dict(zip(MANIFEST_COLUMNS, parts))
    try:
        label = int(values['label'])
    except ValueError:
        raise ManifestError(f"label {values['label']!r} is not an integer", line=line_no)
    try:
        record = SampleRecord(
            sample_id=values['sample_id'].strip(),
            filepath=values['filepath'],
            report_path=_field(values['report_path']),
            pe_path=_field(values['pe_path']),
            static_path=_field(values['static_path']),
            label=label,
            family=_field(values['family']),
            split=_field(values['split']),
        )
    except ValidationError as e:
        reasons = '; '.join(err['msg'] for err in e.errors())
        raise ManifestError(f"invalid record: {reasons}", line=line_no)
    if not record.sample_id:
        raise ManifestError("empty sample_id", line=line_no)
    if not record.has_static:
        raise ManifestError(f"sample {record.sample_id} has neither pe_path nor static_path", line=line_no)
    return record


def load_manifest(path: Union[str, Path], valid_fraction: float = 0.2, seed: int = 0) -> List[SampleRecord]:
    """
    Read and validate a manifest

    Records without a split are assigned train/valid by a split stratified on family.

    Args:
        path: Manifest file
        valid_fraction: Validation share for unassigned records
        seed: Split seed

    Returns:
        Records in file order
    """
    path = Path(path)
    records: List[SampleRecord] = []
    seen = {}
    header_seen = False
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip() or line.startswith('#'):
                continue
            if not header_seen:
                header = line.rstrip('\r\n').split('\t')
                if header != MANIFEST_COLUMNS:
                    raise ManifestError(f"header must be {MANIFEST_COLUMNS}, got {header}", line=line_no)
                header_seen = True
                continue
            record = parse_manifest_line(line, line_no)
            if record.sample_id in seen:
                raise ManifestError(
                    f"duplicate sample_id {record.sample_id} (first on line {seen[record.sample_id]})", line=line_no
                )
            seen[record.sample_id] = line_no
            records.append(record)

    if not header_seen:
        raise ManifestError(f"{path}: no header row")
    if any(record.split is None for record in records):
        records = assign_splits(records, valid_fraction=valid_fraction, seed=seed)

    summary = split_summary(records)
    logger.info(f"✅ Loaded manifest {path}: {len(records)} records\n{summary.to_string()}")
    return records


def assign_splits(records: Sequence[SampleRecord], valid_fraction: float = 0.2, seed: int = 0) -> List[SampleRecord]:
    """
    Give every record without a split 'train' or 'valid', stratified by family

    Strata too small to split fall back to label stratification, then to an unstratified split.
    """
    records = list(records)
    pending = [i for i, record in enumerate(records) if record.split is None]
    if not pending:
        return records
    if len(pending) < 2:
        for i in pending:
            records[i] = records[i].model_copy(update={'split': 'train'})
        return records

    index = np.array(pending)
    train_idx = valid_idx = None
    for name, strata in (('family', [records[i].stratum for i in pending]), ('label', [str(records[i].label) for i in pending])):
        try:
            train_idx, valid_idx = train_test_split(index, test_size=valid_fraction, random_state=seed, stratify=strata)
            break
        except ValueError:
            logger.warning(f"⚠️  Split stratified on {name} not possible, falling back")
    if train_idx is None:
        train_idx, valid_idx = train_test_split(index, test_size=valid_fraction, random_state=seed)
    for i in train_idx:
        records[i] = records[i].model_copy(update={'split': 'train'})
    for i in valid_idx:
        records[i] = records[i].model_copy(update={'split': 'valid'})
    return records


def split_summary(records: Sequence[SampleRecord]) -> pd.DataFrame:
    """Sample counts per split and label, with each split's share of the total"""
    frame = pd.DataFrame({
        'split': [record.split or 'unassigned' for record in records],
        'label': [record.label for record in records],
    })
    if frame.empty:
        return pd.DataFrame(columns=['clean', 'malicious', 'share'])
    table = pd.crosstab(frame['split'], frame['label']).reindex(columns=[0, 1], fill_value=0)
    table.columns = ['clean', 'malicious']
    table['share'] = table.sum(axis=1) / len(frame)
    return table


def write_manifest(records: Sequence[SampleRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    lines = ['\t'.join(MANIFEST_COLUMNS)]
    for record in records:
        values = record.model_dump()
        lines.append('\t'.join('' if values[col] is None else str(values[col]) for col in MANIFEST_COLUMNS))
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path
