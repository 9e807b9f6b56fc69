"""
Small helpers shared across the package
Logging setup, content hashing, canonical JSON and run-manifest bookkeeping
"""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
RUN_MANIFEST_NAME = 'run_manifest.json'


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once for an entry point

    Args:
        level: Level name; falls back to QV_LOG_LEVEL, then INFO
    """
    level_name = (level or os.getenv('QV_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(obj: Any) -> str:
    """JSON with sorted keys and no whitespace, stable across runs"""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def config_digest(obj: Any) -> str:
    return sha256_bytes(canonical_json(obj).encode('utf-8'))


def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Union[str, Path], payload: Dict) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_json(path: Union[str, Path]) -> Dict:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def update_run_manifest(
    run_dir: Union[str, Path],
    files: Iterable[Union[str, Path]],
    non_deterministic: Iterable[Union[str, Path]] = (),
) -> Path:
    """
    Record produced files and their content hashes in the run manifest

    Args:
        run_dir: Run directory holding run_manifest.json
        files: Files produced by the current subcommand
        non_deterministic: Subset of files whose content legitimately varies (wall-clock timings)

    Returns:
        Path of the manifest
    """
    run_dir = ensure_dir(run_dir)
    manifest_path = run_dir / RUN_MANIFEST_NAME
    manifest = read_json(manifest_path) if manifest_path.exists() else {'files': {}}
    flagged = {Path(p).resolve() for p in non_deterministic}

    for file_path in files:
        file_path = Path(file_path)
        if not file_path.exists():
            logger.warning(f"⚠️  Skipping missing output in run manifest: {file_path}")
            continue
        try:
            key = file_path.resolve().relative_to(run_dir.resolve()).as_posix()
        except ValueError:
            key = file_path.resolve().as_posix()
        manifest['files'][key] = {
            'sha256': sha256_file(file_path),
            'deterministic': file_path.resolve() not in flagged,
        }

    write_json(manifest_path, manifest)
    return manifest_path
