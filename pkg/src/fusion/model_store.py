"""
Checkpoint directory manager
Loads early-fusion modules and meta-models from disk and assembles the fusion pipeline
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

from src.fusion.configs import MODULE_ORDER, parse_subset, subset_label
from src.fusion.modules import EarlyFusionModule, MetaModel
from src.fusion.pipeline import DEFAULT_THRESHOLD, FusionPipeline
from src.fusion.serialization import (
    load_meta_checkpoint,
    load_module_checkpoint,
    meta_checkpoint_name,
    module_checkpoint_name,
)
from src.utils.errors import CompatibilityError, ConfigurationError
from src.utils.helpers import read_json, sha256_file, write_json

logger = logging.getLogger(__name__)

PIPELINE_FILE = 'pipeline.json'


class ModelStore:
    """
    Manages loading and caching of checkpoints in one directory
    """

    def __init__(self, checkpoint_dir: Union[str, Path] = './models/saved_models'):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.modules: Dict[str, EarlyFusionModule] = {}
        self.metas: Dict[str, MetaModel] = {}

        logger.info(f"Initializing ModelStore with directory: {checkpoint_dir}")

    def load_all_models(self, expected_hashes: Optional[Dict[str, str]] = None):
        """
        Load every module and meta-model checkpoint present

        Args:
            expected_hashes: Featurizer hash per module id; mismatches raise CompatibilityError
        """
        expected_hashes = expected_hashes or {}
        for module_id in MODULE_ORDER:
            try:
                self.load_module(module_id, expected_hashes.get(module_id))
            except FileNotFoundError as e:
                logger.warning(f"⚠️  No {module_id} module found: {e}")

        for path in sorted(self.checkpoint_dir.glob('meta-*.qvck')):
            subset = parse_subset(path.stem[len('meta-'):])
            missing = [m for m in subset if m not in self.modules]
            if missing:
                logger.warning(f"⚠️  Skipping meta-model {path.name}: modules {missing} not loaded")
                continue
            self.load_meta(subset)

        logger.info(f"✅ Loaded modules {list(self.modules)} and meta-models {sorted(self.metas)}")

    def load_module(self, module_id: str, expected_hash: Optional[str] = None) -> EarlyFusionModule:
        path = self.checkpoint_dir / module_checkpoint_name(module_id)
        if not path.exists():
            raise FileNotFoundError(f"No checkpoint for module {module_id}: {path}")

        logger.info(f"Loading {module_id} module from: {path}")
        module = load_module_checkpoint(path, expected_hash=expected_hash)
        self.modules[module_id] = module
        return module

    def load_meta(self, subset: Sequence[str]) -> MetaModel:
        path = self.checkpoint_dir / meta_checkpoint_name(subset)
        if not path.exists():
            raise FileNotFoundError(f"No meta-model checkpoint for {subset_label(subset)}: {path}")

        meta = load_meta_checkpoint(path, expected_subset=subset)
        for module_id in meta.subset:
            recorded = meta.featurizer_hashes.get(module_id)
            loaded = self.modules.get(module_id)
            if loaded is not None and recorded and loaded.featurizer_hash and recorded != loaded.featurizer_hash:
                raise CompatibilityError(
                    f"{path}: meta-model expects {module_id} featurizer {recorded}, module has {loaded.featurizer_hash}",
                    expected=recorded, found=loaded.featurizer_hash,
                )
        self.metas[meta.label] = meta
        return meta

    def get_meta(self, subset: Sequence[str]) -> MetaModel:
        label = subset_label(subset)
        if label not in self.metas:
            raise ConfigurationError(f"Meta-model not loaded: {label}")
        return self.metas[label]

    def build_pipeline(self, threshold: Optional[float] = None) -> FusionPipeline:
        """Pipeline over everything loaded; the threshold defaults to the one recorded in pipeline.json"""
        recorded = {}
        manifest_path = self.checkpoint_dir / PIPELINE_FILE
        if manifest_path.exists():
            recorded = read_json(manifest_path)
            if recorded.get('order') != list(MODULE_ORDER):
                raise ConfigurationError(
                    f"{manifest_path}: module order {recorded.get('order')} differs from {list(MODULE_ORDER)}"
                )
        if threshold is None:
            threshold = recorded.get('threshold', DEFAULT_THRESHOLD)
        return FusionPipeline(
            self.modules, list(self.metas.values()), threshold=threshold,
            featurizer_hashes={m: module.featurizer_hash for m, module in self.modules.items()},
        )

    def write_pipeline_manifest(self, pipeline: FusionPipeline) -> Path:
        return write_json(self.checkpoint_dir / PIPELINE_FILE, pipeline.manifest())

    def get_models_info(self) -> Dict:
        """Get metadata about loaded models"""
        info = {}
        for module_id, module in self.modules.items():
            path = self.checkpoint_dir / module_checkpoint_name(module_id)
            info[module_id] = {
                'loaded': True,
                'checkpoint': str(path),
                'sha256': sha256_file(path) if path.exists() else None,
                'parameters': module.train_network().num_parameters(),
                'featurizer_hash': module.featurizer_hash,
            }
        for label, meta in self.metas.items():
            info[f"meta-{label}"] = {
                'loaded': True,
                'kind': meta.config.kind,
                'hidden': meta.config.hidden,
                'parameters': meta.network.num_parameters(),
            }
        return info
