"""
Architecture configurations and presets for the early-fusion modules and meta-models
"""
from itertools import combinations
from typing import List, Sequence, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from src.utils.errors import ConfigurationError

MODULE_ORDER: Tuple[str, ...] = ('fp', 'api', 'emb')
REPRESENTATION_DIM = 128
KERNEL_WIDTHS = [2, 3, 4, 5]
PRESETS = ('full', 'compact')

META_DEPTH_PRESETS = {
    2: [384, 128],
    3: [384, 128, 64],
    4: [384, 128, 64, 16],
    5: [384, 128, 64, 16, 8],
}
DEFAULT_META_DEPTH = 4


class SequenceCnnConfig(BaseModel):
    """Embedding -> parallel conv/max-pool branches -> dense stack ending in the representation layer"""

    vocab_size: int = Field(..., ge=1, description="token slots, excluding the two reserved ids")
    seq_length: int = Field(..., ge=1)
    embed_dim: int = Field(..., ge=1)
    kernel_widths: List[int] = Field(default_factory=lambda: list(KERNEL_WIDTHS))
    channels: int = Field(128, ge=1)
    widths: List[int] = Field(default_factory=lambda: [1024, 512, 256, REPRESENTATION_DIM])
    dropout: float = Field(0.5, ge=0.0, lt=1.0)

    @field_validator('widths')
    @classmethod
    def _ends_in_representation(cls, widths: List[int]) -> List[int]:
        if not widths or widths[-1] != REPRESENTATION_DIM:
            raise ValueError(f"last dense width must be {REPRESENTATION_DIM}, got {widths}")
        return widths

    @model_validator(mode='after')
    def _kernels_fit(self) -> 'SequenceCnnConfig':
        if not self.kernel_widths or max(self.kernel_widths) > self.seq_length:
            raise ValueError(f"kernel widths {self.kernel_widths} do not fit sequence length {self.seq_length}")
        return self

    @property
    def embedding_rows(self) -> int:
        return self.vocab_size + 2

    @property
    def representation_dim(self) -> int:
        return self.widths[-1]


class EmberFfnnConfig(BaseModel):
    """Dense stack over static vectors: linear -> layer norm -> ELU -> dropout"""

    input_dim: int = Field(768, ge=1)
    hidden: List[int] = Field(default_factory=lambda: [512, 512, REPRESENTATION_DIM])
    activation: str = 'elu'
    normalization: str = 'layernorm'
    dropout: float = Field(0.05, ge=0.0, lt=1.0)

    @field_validator('hidden')
    @classmethod
    def _ends_in_representation(cls, hidden: List[int]) -> List[int]:
        if not hidden or hidden[-1] != REPRESENTATION_DIM:
            raise ValueError(f"last hidden width must be {REPRESENTATION_DIM}, got {hidden}")
        return hidden

    @property
    def representation_dim(self) -> int:
        return self.hidden[-1]


class MetaModelConfig(BaseModel):
    kind: str = 'ffnn'
    hidden: List[int] = Field(default_factory=lambda: list(META_DEPTH_PRESETS[DEFAULT_META_DEPTH]))

    @field_validator('kind')
    @classmethod
    def _known_kind(cls, kind: str) -> str:
        if kind not in ('logistic_regression', 'ffnn'):
            raise ValueError(f"meta-model kind must be logistic_regression or ffnn, got {kind!r}")
        return kind

    @property
    def label(self) -> str:
        if self.kind == 'logistic_regression':
            return 'lr'
        return f"ffnn{len(self.hidden)}"


def path_cnn_config(preset: str = 'full', **overrides) -> SequenceCnnConfig:
    _check_preset(preset)
    if preset == 'full':
        base = dict(vocab_size=150, seq_length=100, embed_dim=64)
    else:
        base = dict(vocab_size=150, seq_length=100, embed_dim=16, channels=32, widths=[256, REPRESENTATION_DIM])
    return SequenceCnnConfig(**{**base, **overrides})


def api_cnn_config(preset: str = 'full', **overrides) -> SequenceCnnConfig:
    _check_preset(preset)
    if preset == 'full':
        base = dict(vocab_size=600, seq_length=150, embed_dim=96)
    else:
        base = dict(vocab_size=600, seq_length=150, embed_dim=16, channels=32, widths=[256, REPRESENTATION_DIM])
    return SequenceCnnConfig(**{**base, **overrides})


def ember_ffnn_config(preset: str = 'full', **overrides) -> EmberFfnnConfig:
    _check_preset(preset)
    base = {} if preset == 'full' else dict(hidden=[256, REPRESENTATION_DIM])
    return EmberFfnnConfig(**{**base, **overrides})


def meta_config(depth: int = DEFAULT_META_DEPTH) -> MetaModelConfig:
    """FFNN meta-model with 2-5 hidden layers, or logistic regression for depth 0"""
    if depth == 0:
        return MetaModelConfig(kind='logistic_regression', hidden=[])
    if depth not in META_DEPTH_PRESETS:
        raise ConfigurationError(f"no meta-model preset of depth {depth}; choose 0 or one of {sorted(META_DEPTH_PRESETS)}")
    return MetaModelConfig(kind='ffnn', hidden=list(META_DEPTH_PRESETS[depth]))


def comparison_configs() -> List[MetaModelConfig]:
    """LR followed by the FFNN depth sweep"""
    return [meta_config(0)] + [meta_config(depth) for depth in sorted(META_DEPTH_PRESETS)]


def _check_preset(preset: str):
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose one of {PRESETS}")


def canonical_subset(modules: Sequence[str]) -> Tuple[str, ...]:
    """Module ids in concatenation order; unknown or repeated ids are configuration errors"""
    unknown = [m for m in modules if m not in MODULE_ORDER]
    if unknown:
        raise ConfigurationError(f"unknown module ids {unknown}; known: {MODULE_ORDER}")
    if len(set(modules)) != len(modules):
        raise ConfigurationError(f"repeated module ids in {list(modules)}")
    if not modules:
        raise ConfigurationError("module subset must not be empty")
    return tuple(m for m in MODULE_ORDER if m in modules)


def subset_label(modules: Sequence[str]) -> str:
    return '+'.join(canonical_subset(modules))


def parse_subset(label: str) -> Tuple[str, ...]:
    return canonical_subset([part.strip() for part in label.split('+') if part.strip()])


def all_subsets() -> List[Tuple[str, ...]]:
    """The seven non-empty subsets: singles, pairs, then the full set"""
    return [combo for size in range(1, len(MODULE_ORDER) + 1) for combo in combinations(MODULE_ORDER, size)]
