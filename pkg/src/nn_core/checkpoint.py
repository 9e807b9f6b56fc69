"""
Versioned binary checkpoint container

Layout:
    b"QVCK" | u16 format version | u32 manifest length | manifest (UTF-8 JSON)
    | little-endian float32 blocks in the order listed by manifest["blocks"]
"""
import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from src.utils.errors import CompatibilityError
from src.utils.helpers import canonical_json, ensure_dir

logger = logging.getLogger(__name__)

MAGIC = b'QVCK'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<HI')


def write_checkpoint(path: Union[str, Path], manifest: Dict, blocks: List[Tuple[str, np.ndarray]]) -> Path:
    """
    Serialize a manifest and named parameter blocks

    Args:
        path: Destination file
        manifest: JSON-serializable description (kinds, shapes, hyper settings, hashes)
        blocks: (name, array) pairs in declaration order

    Returns:
        Path written
    """
    path = Path(path)
    ensure_dir(path.parent)
    manifest = dict(manifest)
    manifest['blocks'] = [{'name': name, 'shape': list(np.shape(array))} for name, array in blocks]
    header = canonical_json(manifest).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(FORMAT_VERSION, len(header)))
        f.write(header)
        for _, array in blocks:
            f.write(np.ascontiguousarray(array, dtype='<f4').tobytes())

    logger.debug(f"Checkpoint written: {path} ({len(blocks)} blocks)")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict, Dict[str, np.ndarray]]:
    """
    Read a checkpoint written by write_checkpoint

    Returns:
        (manifest, {block name: float32 array})
    """
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CompatibilityError(
            f"{path}: not a checkpoint (magic {data[:4]!r}, expected {MAGIC!r})",
            expected=MAGIC.decode(), found=repr(data[:4]),
        )
    if len(data) < 4 + _HEADER.size:
        raise CompatibilityError(f"{path}: truncated checkpoint header")
    version, header_len = _HEADER.unpack_from(data, 4)
    if version != FORMAT_VERSION:
        raise CompatibilityError(
            f"{path}: checkpoint format version {version}, runtime supports {FORMAT_VERSION}",
            expected=str(FORMAT_VERSION), found=str(version),
        )

    start = 4 + _HEADER.size
    try:
        manifest = json.loads(data[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CompatibilityError(f"{path}: unreadable checkpoint manifest ({e})")

    offset = start + header_len
    arrays: Dict[str, np.ndarray] = {}
    for block in manifest.get('blocks', []):
        shape = tuple(block['shape'])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(data):
            raise CompatibilityError(f"{path}: truncated parameter block {block['name']}")
        arrays[block['name']] = np.frombuffer(data, dtype='<f4', count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise CompatibilityError(f"{path}: {len(data) - offset} trailing bytes after parameter blocks")
    return manifest, arrays
