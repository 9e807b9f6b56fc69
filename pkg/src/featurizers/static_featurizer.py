"""
Static feature vectors from raw PE bytes
A reduced Ember-style scheme: byte histogram, byte-entropy histogram,
header block, hashed imports and hashed section profile
"""
import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pefile
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator

from src.utils.errors import DimensionError, InputError
from src.utils.helpers import canonical_json, config_digest, ensure_dir

logger = logging.getLogger(__name__)

HEADER_DIM = 64
VECTOR_MAGIC = b'QVSV'
VECTOR_FORMAT_VERSION = 1
_VECTOR_HEADER = struct.Struct('<HI')

MACHINES = (0x014c, 0x8664)
YEAR_EDGES = (2000, 2005, 2010, 2015, 2018, 2020, 2022)
SUBSYSTEMS = (2, 3, 1)  # windows gui, windows cui, native
SECONDS_PER_YEAR = 31556952

SCN_CNT_CODE = 0x00000020
SCN_CNT_INITIALIZED_DATA = 0x00000040
SCN_CNT_UNINITIALIZED_DATA = 0x00000080
SCN_MEM_EXECUTE = 0x20000000
SCN_MEM_READ = 0x40000000
SCN_MEM_WRITE = 0x80000000
SECTION_FLAGS = {
    'code': SCN_CNT_CODE,
    'idata': SCN_CNT_INITIALIZED_DATA,
    'udata': SCN_CNT_UNINITIALIZED_DATA,
    'exec': SCN_MEM_EXECUTE,
    'read': SCN_MEM_READ,
    'write': SCN_MEM_WRITE,
}


class StaticFeatureConfig(BaseModel):
    """Block layout of the static vector; the header block is fixed at 64 slots"""

    entropy_window: int = Field(2048, ge=1)
    entropy_stride: int = Field(1024, ge=1)
    import_bins: int = Field(128, ge=1)
    section_bins: int = Field(64, ge=1)

    @property
    def dim(self) -> int:
        return 256 + 256 + HEADER_DIM + self.import_bins + self.section_bins

    @property
    def schema_version(self) -> str:
        return f"qv-static-v1-d{self.dim}"


class SectionSummary(BaseModel):
    name: str
    raw_size: int
    virtual_size: int
    entropy: float
    characteristics: int


class PeSummary(BaseModel):
    """Parsed PE fields; when parse_ok is false everything except file_size is zeroed"""

    parse_ok: bool = False
    file_size: int = 0
    machine: int = 0
    timestamp: int = 0
    num_sections: int = 0
    entry_point: int = 0
    size_of_image: int = 0
    size_of_headers: int = 0
    size_of_code: int = 0
    size_of_initialized_data: int = 0
    characteristics: int = 0
    dll_characteristics: int = 0
    subsystem: int = 0
    major_linker_version: int = 0
    minor_linker_version: int = 0
    major_os_version: int = 0
    major_image_version: int = 0
    imports: List[str] = []
    sections: List[SectionSummary] = []
    entry_section: Optional[str] = None

    @model_validator(mode='after')
    def _zero_when_unparsed(self) -> 'PeSummary':
        if not self.parse_ok and (self.machine or self.num_sections or self.imports or self.sections):
            raise ValueError("unparsed summary must not carry PE fields")
        return self


def _as_array(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype=np.uint8)


def byte_histogram(data: bytes) -> np.ndarray:
    """Normalized 256-bin byte counts; zeros for empty input"""
    counts = np.bincount(_as_array(data), minlength=256).astype(np.float64)
    total = counts.sum()
    return counts / total if total else counts


def byte_entropy_histogram(data: bytes, window: int = 2048, stride: int = 1024) -> np.ndarray:
    """
    Joint (window entropy, coarse byte value) histogram, 16 x 16, flattened and normalized

    Each window contributes the counts of its bytes' high nibbles to the row of
    its entropy bin. Input shorter than one window is a single window; longer
    input gets one extra window aligned to its end when the stride leaves a tail.

    Args:
        data: Raw bytes
        window: Window length
        stride: Step between window starts

    Returns:
        256-dim vector summing to 1 (all-zero for empty input)
    """
    a = _as_array(data)
    output = np.zeros((16, 16), dtype=np.float64)
    if a.size == 0:
        return output.ravel()
    if a.size < window:
        blocks = a[None, :]
    else:
        starts = np.arange(0, a.size - window + 1, stride)
        if starts[-1] + window < a.size:
            starts = np.append(starts, a.size - window)
        blocks = np.lib.stride_tricks.sliding_window_view(a, window)[starts]

    coarse = (blocks >> 4).astype(np.int64)
    n_blocks, block_len = coarse.shape
    offsets = coarse + 16 * np.arange(n_blocks)[:, None]
    counts = np.bincount(offsets.ravel(), minlength=16 * n_blocks).reshape(n_blocks, 16).astype(np.float64)

    p = counts / block_len
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = np.where(counts > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    # coarse nibbles carry half the bits of a byte
    entropy = terms.sum(axis=1) * 2
    entropy_bins = np.minimum((entropy * 2).astype(np.int64), 15)

    np.add.at(output, entropy_bins, counts)
    return (output / output.sum()).ravel()


def parse_pe(data: bytes) -> PeSummary:
    """
    Extract header, section and import fields with pefile

    Never raises: malformed or truncated input yields parse_ok=False.
    """
    if len(data) < 64 or data[:2] != b'MZ':
        return PeSummary(file_size=len(data))
    try:
        pe = pefile.PE(data=data, fast_load=True)
        try:
            coff_end = pe.FILE_HEADER.get_file_offset() + pe.FILE_HEADER.sizeof()
            if coff_end + pe.FILE_HEADER.SizeOfOptionalHeader > len(data):
                return PeSummary(file_size=len(data))

            pe.parse_data_directories(directories=[pefile.DIRECTORY_ENTRY['IMAGE_DIRECTORY_ENTRY_IMPORT']])

            imports = []
            for entry in getattr(pe, 'DIRECTORY_ENTRY_IMPORT', []):
                dll = entry.dll.decode('utf-8', errors='ignore').lower()
                for imp in entry.imports:
                    name = imp.name.decode('utf-8', errors='ignore').lower() if imp.name else f"ordinal{imp.ordinal}"
                    imports.append(f"{dll}:{name}")

            opt = pe.OPTIONAL_HEADER
            entry_point = int(opt.AddressOfEntryPoint)
            sections = []
            entry_section = None
            for section in pe.sections:
                name = section.Name.rstrip(b'\x00').decode('utf-8', errors='ignore').lower()
                sections.append(SectionSummary(
                    name=name,
                    raw_size=int(section.SizeOfRawData),
                    virtual_size=int(section.Misc_VirtualSize),
                    entropy=float(section.get_entropy()),
                    characteristics=int(section.Characteristics),
                ))
                if entry_section is None and section.contains_rva(entry_point):
                    entry_section = name

            return PeSummary(
                parse_ok=True,
                file_size=len(data),
                machine=int(pe.FILE_HEADER.Machine),
                timestamp=int(pe.FILE_HEADER.TimeDateStamp),
                num_sections=int(pe.FILE_HEADER.NumberOfSections),
                entry_point=entry_point,
                size_of_image=int(opt.SizeOfImage),
                size_of_headers=int(opt.SizeOfHeaders),
                size_of_code=int(opt.SizeOfCode),
                size_of_initialized_data=int(opt.SizeOfInitializedData),
                characteristics=int(pe.FILE_HEADER.Characteristics),
                dll_characteristics=int(opt.DllCharacteristics),
                subsystem=int(opt.Subsystem),
                major_linker_version=int(opt.MajorLinkerVersion),
                minor_linker_version=int(opt.MinorLinkerVersion),
                major_os_version=int(opt.MajorOperatingSystemVersion),
                major_image_version=int(opt.MajorImageVersion),
                imports=imports,
                sections=sections,
                entry_section=entry_section,
            )
        finally:
            pe.close()
    except Exception as e:
        logger.debug(f"PE parse failed: {e}")
        return PeSummary(file_size=len(data))


def signed_hash(key: str) -> Tuple[int, float]:
    """64-bit BLAKE2b of the UTF-8 key -> (unsigned value, sign from the top bit)"""
    digest = hashlib.blake2b(key.encode('utf-8'), digest_size=8).digest()
    value = int.from_bytes(digest, 'little')
    return value, -1.0 if value >> 63 else 1.0


def hash_features(pairs: Iterable[Tuple[str, float]], bins: int) -> np.ndarray:
    """Signed feature hashing: each (key, value) adds ±value to bin hash(key) % bins"""
    out = np.zeros(bins, dtype=np.float64)
    for key, value in pairs:
        h, sign = signed_hash(key)
        out[h % bins] += sign * value
    return out


def _one_hot(index: int, size: int) -> List[float]:
    row = [0.0] * size
    row[index] = 1.0
    return row


def _bits(value: int, width: int = 16) -> List[float]:
    return [float((value >> bit) & 1) for bit in range(width)]


def _scaled_log(value: int) -> float:
    return float(np.log1p(max(value, 0)) / 22.0)


def header_block(summary: PeSummary) -> np.ndarray:
    """64 fixed slots of sizes, one-hot codes, flag bits and versions"""
    if not summary.parse_ok:
        return np.zeros(HEADER_DIM)

    machine_slot = MACHINES.index(summary.machine) if summary.machine in MACHINES else len(MACHINES)
    year = 1970 + summary.timestamp // SECONDS_PER_YEAR
    year_slot = int(np.searchsorted(YEAR_EDGES, year, side='right'))
    subsystem_slot = SUBSYSTEMS.index(summary.subsystem) if summary.subsystem in SUBSYSTEMS else len(SUBSYSTEMS)

    entry = next((s for s in summary.sections if s.name == summary.entry_section), None)
    entropies = [s.entropy for s in summary.sections]

    values = [
        _scaled_log(summary.file_size),
        _scaled_log(summary.size_of_image),
        _scaled_log(summary.size_of_headers),
        _scaled_log(summary.size_of_code),
        _scaled_log(summary.size_of_initialized_data),
        _scaled_log(summary.entry_point),
        min(summary.num_sections, 64) / 64.0,
        float(np.log1p(len(summary.imports)) / 10.0),
    ]
    values += _one_hot(machine_slot, len(MACHINES) + 1)
    values += _one_hot(year_slot, len(YEAR_EDGES) + 1)
    values += _bits(summary.characteristics)
    values += _bits(summary.dll_characteristics)
    values += _one_hot(subsystem_slot, len(SUBSYSTEMS) + 1)
    values += [
        min(summary.major_linker_version, 255) / 255.0,
        min(summary.minor_linker_version, 255) / 255.0,
        min(summary.major_os_version, 255) / 255.0,
        min(summary.major_image_version, 255) / 255.0,
    ]
    values += [
        float(entry is not None and bool(entry.characteristics & SCN_MEM_EXECUTE)),
        float(entry is not None and bool(entry.characteristics & SCN_MEM_WRITE)),
        float(entry is None),
    ]
    values += [max(entropies) / 8.0 if entropies else 0.0, float(np.mean(entropies)) / 8.0 if entropies else 0.0]
    return np.asarray(values, dtype=np.float64)


def import_block(summary: PeSummary, bins: int = 128) -> np.ndarray:
    if not summary.parse_ok:
        return np.zeros(bins)
    return hash_features(((key, 1.0) for key in summary.imports), bins)


def section_block(summary: PeSummary, bins: int = 64) -> np.ndarray:
    if not summary.parse_ok:
        return np.zeros(bins)
    pairs = []
    for section in summary.sections:
        pairs.append((f"size:{section.name}", _scaled_log(section.raw_size)))
        pairs.append((f"vsize:{section.name}", _scaled_log(section.virtual_size)))
        pairs.append((f"entropy:{section.name}", section.entropy / 8.0))
        for flag, mask in SECTION_FLAGS.items():
            if section.characteristics & mask:
                pairs.append((f"{flag}:{section.name}", 1.0))
    return hash_features(pairs, bins)


def featurize_static(data: bytes, config: Optional[StaticFeatureConfig] = None) -> np.ndarray:
    """
    Static feature vector of a byte string; total and deterministic

    Returns:
        float32 vector of config.dim values (768 by default)
    """
    config = config or StaticFeatureConfig()
    summary = parse_pe(data)
    vector = np.concatenate([
        byte_histogram(data),
        byte_entropy_histogram(data, config.entropy_window, config.entropy_stride),
        header_block(summary),
        import_block(summary, config.import_bins),
        section_block(summary, config.section_bins),
    ]).astype(np.float32)
    return np.nan_to_num(vector, nan=0.0, posinf=0.0, neginf=0.0)


def write_static_vectors(path: Union[str, Path], sample_ids: Sequence[str], matrix: np.ndarray,
                         schema_version: str) -> Path:
    """Store a (samples, dim) float32 matrix with its ids and schema version"""
    matrix = np.asarray(matrix, dtype='<f4')
    if matrix.ndim != 2 or matrix.shape[0] != len(sample_ids):
        raise DimensionError(f"static vectors: matrix {matrix.shape} does not match {len(sample_ids)} ids")
    header = canonical_json({
        'schema_version': schema_version,
        'dim': int(matrix.shape[1]),
        'sample_ids': list(sample_ids),
    }).encode('utf-8')
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, 'wb') as f:
        f.write(VECTOR_MAGIC)
        f.write(_VECTOR_HEADER.pack(VECTOR_FORMAT_VERSION, len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(matrix).tobytes())
    return path


def read_static_vectors(path: Union[str, Path]) -> Tuple[List[str], np.ndarray, str]:
    """
    Returns:
        (sample_ids, float32 matrix, schema_version)
    """
    data = Path(path).read_bytes()
    if data[:4] != VECTOR_MAGIC or len(data) < 4 + _VECTOR_HEADER.size:
        raise InputError(f"{path}: not a static vector file")
    version, header_len = _VECTOR_HEADER.unpack_from(data, 4)
    if version != VECTOR_FORMAT_VERSION:
        raise InputError(f"{path}: static vector format version {version}, expected {VECTOR_FORMAT_VERSION}")
    start = 4 + _VECTOR_HEADER.size
    header = json.loads(data[start:start + header_len].decode('utf-8'))
    ids, dim = header['sample_ids'], int(header['dim'])
    body = data[start + header_len:]
    if len(body) != 4 * dim * len(ids):
        raise DimensionError(f"{path}: body holds {len(body)} bytes, expected {4 * dim * len(ids)}")
    matrix = np.frombuffer(body, dtype='<f4').reshape(len(ids), dim).astype(np.float32)
    return ids, matrix, header['schema_version']


class StaticFeaturizer:
    """Byte string or file -> static feature vector"""

    def __init__(self, config: Optional[StaticFeatureConfig] = None):
        self.config = config or StaticFeatureConfig()

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def schema_version(self) -> str:
        return self.config.schema_version

    def encode(self, data: bytes) -> np.ndarray:
        return featurize_static(data, self.config)

    def encode_file(self, path: Union[str, Path]) -> np.ndarray:
        return self.encode(Path(path).read_bytes())

    def encode_files(self, paths: Sequence[Union[str, Path]], jobs: int = 1) -> np.ndarray:
        rows = Parallel(n_jobs=jobs)(delayed(self.encode_file)(path) for path in paths)
        return np.stack(rows) if rows else np.zeros((0, self.dim), dtype=np.float32)

    def config_hash(self) -> str:
        return config_digest({'kind': 'static', **self.config.model_dump(), 'schema': self.schema_version})
