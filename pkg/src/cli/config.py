"""
Run configuration: YAML file, then command-line flags, with .env fallbacks
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.data_ingestion.synthetic import SynthSpec
from src.featurizers.apiseq_featurizer import DEFAULT_API_LENGTH, DEFAULT_API_VOCAB_SIZE
from src.featurizers.path_featurizer import DEFAULT_PATH_LENGTH, DEFAULT_PATH_VOCAB_SIZE
from src.fusion.configs import DEFAULT_META_DEPTH, MODULE_ORDER, PRESETS, canonical_subset
from src.fusion.pipeline import DEFAULT_THRESHOLD
from src.training.metrics import DEFAULT_FPR_GRID
from src.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

# Environment fallbacks, used only when neither the file nor a flag sets the field
ENV_FALLBACKS = {
    'jobs': 'QV_JOBS',
    'log_level': 'QV_LOG_LEVEL',
    'run_dir': 'QV_RUN_DIR',
}


class RunConfig(BaseModel):
    """Everything a subcommand needs; directories default to fixed names under run_dir"""

    model_config = {'extra': 'forbid'}

    run_dir: Path = Path('runs/default')
    manifest: Optional[Path] = None
    corpus_dir: Optional[Path] = None
    checkpoints_dir: Optional[Path] = None
    env_map: Optional[Path] = None

    modules: List[str] = Field(default_factory=lambda: list(MODULE_ORDER))
    preset: str = 'full'
    meta_depth: int = DEFAULT_META_DEPTH
    path_vocab_size: int = DEFAULT_PATH_VOCAB_SIZE
    path_length: int = DEFAULT_PATH_LENGTH
    api_vocab_size: int = DEFAULT_API_VOCAB_SIZE
    api_length: int = DEFAULT_API_LENGTH

    seed: Optional[int] = None
    epochs: int = Field(20, ge=0)
    meta_epochs: int = Field(20, ge=0)
    batch_size: int = Field(1024, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    patience: int = Field(10, ge=1)
    valid_fraction: float = Field(0.2, gt=0, lt=1)

    threshold: float = Field(DEFAULT_THRESHOLD, gt=0, le=1)
    calibrate_fpr: Optional[float] = Field(None, gt=0, lt=1)
    fpr_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_FPR_GRID))
    predict_split: Optional[str] = None
    compare_meta_models: bool = True

    jobs: int = Field(1, ge=1)
    log_level: str = 'INFO'
    synth: SynthSpec = Field(default_factory=SynthSpec)

    @field_validator('modules')
    @classmethod
    def _canonical_modules(cls, modules: List[str]) -> List[str]:
        try:
            return list(canonical_subset(modules))
        except ConfigurationError as e:
            raise ValueError(str(e))

    @field_validator('preset')
    @classmethod
    def _known_preset(cls, preset: str) -> str:
        if preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, got {preset!r}")
        return preset

    @field_validator('fpr_grid')
    @classmethod
    def _fpr_levels(cls, grid: List[float]) -> List[float]:
        if not grid or any(not 0 < f < 1 for f in grid):
            raise ValueError(f"fpr_grid levels must lie in (0, 1), got {grid}")
        return sorted(grid)

    @property
    def featurizers_dir(self) -> Path:
        return self.run_dir / 'featurizers'

    @property
    def encoded_dir(self) -> Path:
        return self.run_dir / 'encoded'

    @property
    def model_dir(self) -> Path:
        return self.checkpoints_dir or self.run_dir / 'checkpoints'

    @property
    def history_dir(self) -> Path:
        return self.run_dir / 'history'

    @property
    def eval_dir(self) -> Path:
        return self.run_dir / 'eval'

    @property
    def report_dir(self) -> Path:
        return self.run_dir / 'report'

    @property
    def predictions_path(self) -> Path:
        return self.run_dir / 'predictions.csv'

    @property
    def synthetic_dir(self) -> Path:
        return self.corpus_dir or self.run_dir / 'corpus'

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigurationError("a seed is required for training (set seed in the config or pass --seed)")
        return self.seed

    def require_manifest(self) -> Path:
        if self.manifest is None:
            raise ConfigurationError("no manifest given (set manifest in the config or pass --manifest)")
        return self.manifest


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML: {e}")
    if payload is None:
        return {}
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{path}: expected a mapping at the top level")
    return payload


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig

    Args:
        path: Optional YAML file
        overrides: Values from command-line flags; None entries are ignored

    Returns:
        Validated RunConfig (flags win over the file, the file over .env)
    """
    load_dotenv()
    values: Dict[str, Any] = read_config_file(path) if path else {}
    for field, variable in ENV_FALLBACKS.items():
        if field not in values and os.getenv(variable):
            values[field] = os.getenv(variable)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith('synth.'):
            values.setdefault('synth', {})[key[len('synth.'):]] = value
        else:
            values[key] = value

    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid run configuration: {e}")
