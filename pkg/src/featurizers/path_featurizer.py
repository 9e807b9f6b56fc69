"""
Windows filepath normalization and byte-level tokenization
Raw paths are canonicalized (drive, UNC, user, environment placeholders)
and encoded as fixed-length sequences of UTF-8 byte tokens
"""
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from src.featurizers.sequences import PAD_ID, RARE_ID, RESERVED_IDS, TokenSequence, pad_truncate
from src.utils.errors import InputError
from src.utils.helpers import config_digest, ensure_dir

logger = logging.getLogger(__name__)

DEFAULT_PATH_VOCAB_SIZE = 150
DEFAULT_PATH_LENGTH = 100
BYTE_VOCAB_HEADER = 'qv-byte-vocab'
VOCAB_FORMAT_VERSION = 1

DEFAULT_ENV_MAP: Dict[str, str] = {
    'allusersprofile': '[drive]\\programdata',
    'appdata': '[drive]\\users\\[user]\\appdata\\roaming',
    'commonprogramfiles': '[drive]\\program files\\common files',
    'commonprogramfiles(x86)': '[drive]\\program files (x86)\\common files',
    'commonprogramw6432': '[drive]\\program files\\common files',
    'comspec': '[drive]\\windows\\system32\\cmd.exe',
    'driverdata': '[drive]\\windows\\system32\\drivers\\driverdata',
    'homedrive': '[drive]',
    'homepath': '\\users\\[user]',
    'localappdata': '[drive]\\users\\[user]\\appdata\\local',
    'onedrive': '[drive]\\users\\[user]\\onedrive',
    'programdata': '[drive]\\programdata',
    'programfiles': '[drive]\\program files',
    'programfiles(x86)': '[drive]\\program files (x86)',
    'programw6432': '[drive]\\program files',
    'psmodulepath': '[drive]\\windows\\system32\\windowspowershell\\v1.0\\modules',
    'public': '[drive]\\users\\public',
    'systemdrive': '[drive]',
    'systemroot': '[drive]\\windows',
    'temp': '[drive]\\users\\[user]\\appdata\\local\\temp',
    'tmp': '[drive]\\users\\[user]\\appdata\\local\\temp',
    'userprofile': '[drive]\\users\\[user]',
    'username': '[user]',
    'windir': '[drive]\\windows',
    'startup': '[drive]\\users\\[user]\\appdata\\roaming\\microsoft\\windows\\start menu\\programs\\startup',
    'desktop': '[drive]\\users\\[user]\\desktop',
    'documents': '[drive]\\users\\[user]\\documents',
    'downloads': '[drive]\\users\\[user]\\downloads',
    'system32': '[drive]\\windows\\system32',
    'syswow64': '[drive]\\windows\\syswow64',
}

# shared profile folders that are not user names
SHARED_PROFILES = frozenset({'public', 'default', 'all users', 'default user', '[user]'})

_LONG_UNC_PREFIX = re.compile(r'^\\\\\?\\unc\\', re.IGNORECASE)
_LONG_PREFIX = re.compile(r'^\\\\\?\\')
_ENV_VAR = re.compile(r'%([^%\\]+)%')
_DRIVE = re.compile(r'^[a-z]:\\?')
_PROFILE_DIR = re.compile(r'\\(users|documents and settings)\\([^\\]+)')


def load_env_map(path: Optional[Union[str, Path]] = None, base: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    """
    Read `variable=replacement` lines and merge them over the default map

    Args:
        path: Env-map text file; None returns the base map
        base: Map to merge onto (DEFAULT_ENV_MAP when None)

    Returns:
        Mapping with lowercase variable names
    """
    env_map = dict(DEFAULT_ENV_MAP if base is None else base)
    if path is None:
        return env_map

    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise InputError(f"{path}: line {line_no}: expected variable=replacement, got {line!r}")
            name, replacement = line.split('=', 1)
            name = name.strip().strip('%').lower()
            if not name:
                raise InputError(f"{path}: line {line_no}: empty variable name")
            env_map[name] = replacement.strip()

    logger.info(f"✅ Loaded env map from {path}: {len(env_map)} variables")
    return env_map


def normalize_path(raw: str, env_map: Optional[Dict[str, str]] = None) -> str:
    """
    Canonicalize a Windows filepath

    Forward slashes become backslashes, long-path prefixes are dropped,
    known %variables% are expanded, the text is lowercased, then the UNC
    host prefix, drive letter and profile user name are replaced by
    `[net]`, `[drive]` and `[user]`. Anything unrecognized passes through.

    Args:
        raw: Path as recorded on the endpoint
        env_map: Lowercase variable name -> replacement (DEFAULT_ENV_MAP when None)

    Returns:
        Normalized path text
    """
    env_map = DEFAULT_ENV_MAP if env_map is None else env_map
    text = raw.replace('/', '\\')
    text = _LONG_UNC_PREFIX.sub(r'\\\\', text)
    text = _LONG_PREFIX.sub('', text)

    def expand(match: re.Match) -> str:
        replacement = env_map.get(match.group(1).lower())
        return match.group(0) if replacement is None else replacement

    text = _ENV_VAR.sub(expand, text).lower()

    if text.startswith('\\\\'):
        text = '[net]\\' + text[2:]
    text = _DRIVE.sub(lambda _: '[drive]\\', text, count=1)

    def anonymize(match: re.Match) -> str:
        folder, name = match.group(1), match.group(2)
        if name in SHARED_PROFILES:
            return match.group(0)
        return f"\\{folder}\\[user]"

    return _PROFILE_DIR.sub(anonymize, text)


class ByteVocab:
    """
    Byte -> token id mapping; id 0 is padding, id 1 is the rare/unknown byte

    Args:
        ordered_bytes: Bytes in id order (first gets id 2)
        capacity: Number of byte slots; the embedding table has capacity + 2 rows
    """

    def __init__(self, ordered_bytes: List[int], capacity: int):
        if capacity < 1:
            raise InputError(f"byte vocabulary capacity must be >= 1, got {capacity}")
        if len(ordered_bytes) > capacity:
            raise InputError(f"{len(ordered_bytes)} bytes exceed vocabulary capacity {capacity}")
        self.ordered_bytes = [int(b) for b in ordered_bytes]
        self.capacity = capacity
        self.table = np.full(256, RARE_ID, dtype=np.int64)
        for offset, byte in enumerate(self.ordered_bytes):
            self.table[byte] = RESERVED_IDS + offset

    @property
    def size(self) -> int:
        return self.capacity + RESERVED_IDS

    def mapping(self) -> Dict[int, int]:
        return {byte: RESERVED_IDS + offset for offset, byte in enumerate(self.ordered_bytes)}

    def lookup(self, data: bytes) -> np.ndarray:
        return self.table[np.frombuffer(data, dtype=np.uint8)]

    def __eq__(self, other) -> bool:
        return isinstance(other, ByteVocab) and (self.ordered_bytes, self.capacity) == (other.ordered_bytes, other.capacity)

    def __repr__(self):
        return f"ByteVocab(bytes={len(self.ordered_bytes)}, capacity={self.capacity})"


def _as_bytes(text: Union[str, bytes]) -> bytes:
    return text if isinstance(text, bytes) else text.encode('utf-8')


def build_byte_vocab(corpus: Iterable[Union[str, bytes]], size: int = DEFAULT_PATH_VOCAB_SIZE) -> ByteVocab:
    """
    Keep the `size` most frequent UTF-8 bytes of a corpus

    Ids run from 2 in descending frequency; equal counts are ordered by byte value.

    Args:
        corpus: Normalized paths
        size: Vocabulary capacity

    Returns:
        ByteVocab
    """
    if size < 1:
        raise InputError(f"vocabulary size must be >= 1, got {size}")
    counts = np.zeros(256, dtype=np.int64)
    n_items = 0
    for item in corpus:
        n_items += 1
        data = _as_bytes(item)
        if data:
            counts += np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    if n_items == 0:
        raise InputError("cannot build a byte vocabulary from an empty corpus")

    present = np.flatnonzero(counts)
    # lexsort: last key is primary
    order = present[np.lexsort((present, -counts[present]))]
    return ByteVocab([int(b) for b in order[:size]], capacity=size)


def encode_path(path: Union[str, bytes], vocab: ByteVocab, n: int = DEFAULT_PATH_LENGTH) -> TokenSequence:
    """
    Map UTF-8 bytes through the vocabulary (unknown -> 1) and pad/truncate to n

    Args:
        path: Normalized path
        vocab: Byte vocabulary
        n: Sequence length

    Returns:
        TokenSequence
    """
    return pad_truncate(vocab.lookup(_as_bytes(path)).tolist(), n)


def save_byte_vocab(vocab: ByteVocab, path: Union[str, Path]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    lines = [f"# {BYTE_VOCAB_HEADER} v{VOCAB_FORMAT_VERSION} capacity={vocab.capacity} pad={PAD_ID} rare={RARE_ID}"]
    lines += [f"{byte:02x}\t{token}" for byte, token in vocab.mapping().items()]
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def _parse_vocab_header(line: str, expected: str, path) -> Dict[str, int]:
    parts = line.lstrip('#').split()
    if len(parts) < 2 or parts[0] != expected or parts[1] != f"v{VOCAB_FORMAT_VERSION}":
        raise InputError(f"{path}: not a {expected} v{VOCAB_FORMAT_VERSION} file (header {line!r})")
    fields = {}
    for part in parts[2:]:
        key, _, value = part.partition('=')
        fields[key] = int(value)
    if fields.get('pad') != PAD_ID or fields.get('rare') != RARE_ID:
        raise InputError(f"{path}: reserved ids differ from pad={PAD_ID} rare={RARE_ID}")
    return fields


def load_byte_vocab(path: Union[str, Path]) -> ByteVocab:
    lines = Path(path).read_text(encoding='utf-8').splitlines()
    if not lines:
        raise InputError(f"{path}: empty vocabulary file")
    header = _parse_vocab_header(lines[0], BYTE_VOCAB_HEADER, path)

    ordered: List[int] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            byte_hex, token = line.split('\t')
            byte, token_id = int(byte_hex, 16), int(token)
        except ValueError:
            raise InputError(f"{path}: line {line_no}: expected byte_hex<TAB>token_id, got {line!r}")
        if token_id != RESERVED_IDS + len(ordered) or not 0 <= byte < 256:
            raise InputError(f"{path}: line {line_no}: ids must be contiguous from {RESERVED_IDS}")
        ordered.append(byte)
    return ByteVocab(ordered, capacity=header['capacity'])


class PathFeaturizer:
    """
    Normalize-then-encode pipeline for filepaths

    Args:
        vocab: Byte vocabulary fitted on training paths
        n: Sequence length
        env_map: Environment-variable map (defaults when None)
    """

    def __init__(self, vocab: ByteVocab, n: int = DEFAULT_PATH_LENGTH, env_map: Optional[Dict[str, str]] = None):
        self.vocab = vocab
        self.n = n
        self.env_map = dict(DEFAULT_ENV_MAP if env_map is None else env_map)

    @classmethod
    def fit(cls, raw_paths: Iterable[str], size: int = DEFAULT_PATH_VOCAB_SIZE, n: int = DEFAULT_PATH_LENGTH,
            env_map: Optional[Dict[str, str]] = None) -> 'PathFeaturizer':
        env_map = dict(DEFAULT_ENV_MAP if env_map is None else env_map)
        normalized = [normalize_path(raw, env_map) for raw in raw_paths]
        vocab = build_byte_vocab(normalized, size)
        logger.info(f"✅ Path vocabulary: {len(vocab.ordered_bytes)} bytes from {len(normalized)} paths")
        return cls(vocab, n=n, env_map=env_map)

    def normalize(self, raw: str) -> str:
        return normalize_path(raw, self.env_map)

    def encode(self, raw: str) -> TokenSequence:
        return encode_path(self.normalize(raw), self.vocab, self.n)

    def encode_batch(self, raw_paths: Iterable[str]) -> np.ndarray:
        rows = [self.encode(raw).ids for raw in raw_paths]
        return np.stack(rows) if rows else np.zeros((0, self.n), dtype=np.int64)

    def config_hash(self) -> str:
        return config_digest({
            'kind': 'path',
            'n': self.n,
            'capacity': self.vocab.capacity,
            'bytes': self.vocab.ordered_bytes,
            'env_map': sorted(self.env_map.items()),
        })
