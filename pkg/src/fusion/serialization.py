"""
Checkpoint save/load for early-fusion modules and meta-models
"""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.fusion.configs import MODULE_ORDER, EmberFfnnConfig, MetaModelConfig, SequenceCnnConfig, subset_label
from src.fusion.modules import EarlyFusionModule, MetaModel, build_meta_model, build_module
from src.nn_core.checkpoint import read_checkpoint, write_checkpoint
from src.utils.errors import CompatibilityError, ConfigurationError

logger = logging.getLogger(__name__)

MODULE_ARTIFACT = 'early_fusion_module'
META_ARTIFACT = 'meta_model'


def module_checkpoint_name(module_id: str) -> str:
    return f"{module_id}.qvck"


def meta_checkpoint_name(subset) -> str:
    return f"meta-{subset_label(subset)}.qvck"


def save_module_checkpoint(module: EarlyFusionModule, path: Union[str, Path], featurizer_hash: str) -> Path:
    """
    Args:
        module: Trained early-fusion module
        path: Destination .qvck file
        featurizer_hash: config_hash() of the featurizer that produced the module's inputs
    """
    network = module.train_network()
    manifest = {
        'artifact': MODULE_ARTIFACT,
        'module_id': module.module_id,
        'config_kind': type(module.config).__name__,
        'config': module.config.model_dump(),
        'layers': network.layer_manifest(),
        'featurizer_hash': featurizer_hash,
        'order': list(MODULE_ORDER),
    }
    path = write_checkpoint(path, manifest, network.named_state())
    logger.info(f"✅ Saved {module.module_id} checkpoint: {path}")
    return path


def _check_order(manifest, path):
    if manifest.get('order') != list(MODULE_ORDER):
        raise ConfigurationError(
            f"{path}: checkpoint module order {manifest.get('order')} differs from {list(MODULE_ORDER)}"
        )


def load_module_checkpoint(path: Union[str, Path], expected_hash: Optional[str] = None) -> EarlyFusionModule:
    """
    Rebuild a module from its checkpoint

    Args:
        path: .qvck file
        expected_hash: Featurizer hash of the current run; a different recorded hash is a compatibility error
    """
    manifest, arrays = read_checkpoint(path)
    if manifest.get('artifact') != MODULE_ARTIFACT:
        raise CompatibilityError(f"{path}: not an early-fusion module checkpoint ({manifest.get('artifact')})")
    _check_order(manifest, path)
    recorded = manifest.get('featurizer_hash')
    if expected_hash is not None and recorded != expected_hash:
        raise CompatibilityError(
            f"{path}: featurizer hash mismatch (checkpoint {recorded}, current {expected_hash})",
            expected=expected_hash, found=recorded,
        )

    config_cls = SequenceCnnConfig if manifest['config_kind'] == 'SequenceCnnConfig' else EmberFfnnConfig
    module = build_module(manifest['module_id'], config_cls(**manifest['config']), seed=0, dtype=np.float32)
    module.train_network().load_state(arrays)
    module.featurizer_hash = recorded
    return module


def save_meta_checkpoint(meta: MetaModel, path: Union[str, Path], featurizer_hashes=None,
                         threshold: Optional[float] = None) -> Path:
    manifest = {
        'artifact': META_ARTIFACT,
        'config': meta.config.model_dump(),
        'layers': meta.network.layer_manifest(),
        'featurizer_hashes': dict(featurizer_hashes or {}),
        'threshold': threshold,
        **meta.signature(),
    }
    path = write_checkpoint(path, manifest, meta.network.named_state())
    logger.info(f"✅ Saved meta-model {meta.label} ({meta.config.label}): {path}")
    return path


def load_meta_checkpoint(path: Union[str, Path], expected_subset=None) -> MetaModel:
    """
    Rebuild a meta-model

    Args:
        path: .qvck file
        expected_subset: Subset the caller will feed; a different signature is a configuration error
    """
    manifest, arrays = read_checkpoint(path)
    if manifest.get('artifact') != META_ARTIFACT:
        raise CompatibilityError(f"{path}: not a meta-model checkpoint ({manifest.get('artifact')})")
    _check_order(manifest, path)
    if expected_subset is not None and subset_label(expected_subset) != subset_label(manifest['subset']):
        raise ConfigurationError(
            f"{path}: meta-model trained on {subset_label(manifest['subset'])} "
            f"cannot serve {subset_label(expected_subset)}"
        )
    meta = build_meta_model(manifest['subset'], MetaModelConfig(**manifest['config']), seed=0, dtype=np.float32)
    meta.network.load_state(arrays)
    meta.featurizer_hashes = manifest.get('featurizer_hashes', {})
    meta.threshold = manifest.get('threshold')
    return meta
