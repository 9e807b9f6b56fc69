"""
The three featurizers fitted together on the training split, saved as one directory
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from src.featurizers.apiseq_featurizer import (
    DEFAULT_API_LENGTH,
    DEFAULT_API_VOCAB_SIZE,
    ApiFeaturizer,
    EmulationReport,
    load_api_vocab,
    save_api_vocab,
)
from src.featurizers.path_featurizer import (
    DEFAULT_PATH_LENGTH,
    DEFAULT_PATH_VOCAB_SIZE,
    PathFeaturizer,
    load_byte_vocab,
    load_env_map,
    save_byte_vocab,
)
from src.featurizers.static_featurizer import StaticFeatureConfig, StaticFeaturizer
from src.utils.errors import CompatibilityError
from src.utils.helpers import ensure_dir, read_json, write_json

logger = logging.getLogger(__name__)

BUNDLE_FILE = 'bundle.json'
PATH_VOCAB_FILE = 'path_vocab.txt'
API_VOCAB_FILE = 'api_vocab.txt'
ENV_MAP_FILE = 'env_map.txt'


class FeaturizerBundle:
    """
    Filepath, API-sequence and static featurizers keyed by module id (fp, api, emb)
    """

    def __init__(self, path: PathFeaturizer, api: ApiFeaturizer, static: StaticFeaturizer):
        self.path = path
        self.api = api
        self.static = static

    @classmethod
    def fit(
        cls,
        raw_paths: Iterable[str],
        reports: Iterable[EmulationReport],
        path_vocab_size: int = DEFAULT_PATH_VOCAB_SIZE,
        path_length: int = DEFAULT_PATH_LENGTH,
        api_vocab_size: int = DEFAULT_API_VOCAB_SIZE,
        api_length: int = DEFAULT_API_LENGTH,
        static_config: Optional[StaticFeatureConfig] = None,
        env_map: Optional[Dict[str, str]] = None,
    ) -> 'FeaturizerBundle':
        """
        Build both vocabularies from training data only

        Args:
            raw_paths: Training-split filepaths
            reports: Training-split emulation reports (error reports are ignored)
        """
        logger.info("🚀 Fitting featurizers on the training split")
        bundle = cls(
            path=PathFeaturizer.fit(raw_paths, size=path_vocab_size, n=path_length, env_map=env_map),
            api=ApiFeaturizer.fit(reports, v=api_vocab_size, n=api_length),
            static=StaticFeaturizer(static_config),
        )
        logger.info(f"✅ Featurizers fitted: {bundle.hashes()}")
        return bundle

    def hashes(self) -> Dict[str, str]:
        return {
            'fp': self.path.config_hash(),
            'api': self.api.config_hash(),
            'emb': self.static.config_hash(),
        }

    def save(self, directory: Union[str, Path]) -> Path:
        directory = ensure_dir(directory)
        save_byte_vocab(self.path.vocab, directory / PATH_VOCAB_FILE)
        save_api_vocab(self.api.vocab, directory / API_VOCAB_FILE)
        env_lines = [f"{name}={value}" for name, value in sorted(self.path.env_map.items())]
        (directory / ENV_MAP_FILE).write_text('\n'.join(env_lines) + '\n', encoding='utf-8')
        write_json(directory / BUNDLE_FILE, {
            'path_length': self.path.n,
            'api_length': self.api.n,
            'static_config': self.static.config.model_dump(),
            'hashes': self.hashes(),
        })
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> 'FeaturizerBundle':
        directory = Path(directory)
        meta = read_json(directory / BUNDLE_FILE)
        env_map = load_env_map(directory / ENV_MAP_FILE, base={})
        bundle = cls(
            path=PathFeaturizer(load_byte_vocab(directory / PATH_VOCAB_FILE), n=meta['path_length'], env_map=env_map),
            api=ApiFeaturizer(load_api_vocab(directory / API_VOCAB_FILE), n=meta['api_length']),
            static=StaticFeaturizer(StaticFeatureConfig(**meta['static_config'])),
        )
        recorded, actual = meta.get('hashes', {}), bundle.hashes()
        for module, value in recorded.items():
            if actual.get(module) != value:
                raise CompatibilityError(
                    f"{directory}: featurizer {module} hash {actual.get(module)} differs from recorded {value}",
                    expected=value, found=actual.get(module),
                )
        return bundle
