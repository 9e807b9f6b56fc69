"""
Early-fusion modules (filepath CNN, API-sequence CNN, static FFNN) and meta-models
Each early-fusion module maps one modality to a 128-dim representation in [0, 1]
and carries a sigmoid head used for its own pre-training
"""
import logging
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.fusion.configs import (
    MODULE_ORDER,
    EmberFfnnConfig,
    MetaModelConfig,
    SequenceCnnConfig,
    canonical_subset,
    subset_label,
)
from src.nn_core.layers import (
    Activation,
    BatchNorm,
    Conv1dMaxPool,
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    ParallelConcat,
)
from src.nn_core.network import Network
from src.utils.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

ModuleConfig = Union[SequenceCnnConfig, EmberFfnnConfig]


def _seeded(seed: int) -> Tuple[np.random.Generator, int]:
    """Independent streams for weight init and dropout masks"""
    init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), int(dropout_seq.generate_state(1)[0])


class EarlyFusionModule:
    """
    One modality network: `body` produces the representation, `head` the standalone score

    Args:
        module_id: 'fp', 'api' or 'emb'
        config: Architecture configuration
        body: Network ending in the sigmoid representation layer
        head: Linear(R, 1) + sigmoid
    """

    def __init__(self, module_id: str, config: ModuleConfig, body: Network, head: Network):
        self.module_id = module_id
        self.config = config
        self.body = body
        self.head = head
        self.featurizer_hash: Optional[str] = None
        self._train_network = Network(body.layers + head.layers, name=f"{module_id}.train")

    @property
    def representation_dim(self) -> int:
        return self.config.representation_dim

    @property
    def input_kind(self) -> str:
        return 'tokens' if isinstance(self.config, SequenceCnnConfig) else 'vector'

    def train_network(self) -> Network:
        """Body and head as one network sharing their layers, used for pre-training"""
        return self._train_network

    def check_input(self, x: np.ndarray):
        x = np.asarray(x)
        if isinstance(self.config, SequenceCnnConfig):
            expected = self.config.seq_length
        else:
            expected = self.config.input_dim
        if x.ndim != 2 or x.shape[1] != expected:
            raise DimensionError(f"{self.module_id}: expected input of shape (batch, {expected}), got {x.shape}")

    def prepare(self, x: np.ndarray) -> np.ndarray:
        """Validate shape and cast to the dtype the network consumes"""
        self.check_input(x)
        if self.input_kind == 'tokens':
            return np.asarray(x, dtype=np.int64)
        return np.asarray(x, dtype=self.body.parameters()[0].dtype)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Eval-mode (representation, score) for a batch"""
        representation = self.body.forward(self.prepare(x), mode='eval')
        score = self.head.forward(representation, mode='eval')[:, 0]
        return representation, score

    def represent(self, x: np.ndarray) -> np.ndarray:
        return self.body.forward(self.prepare(x), mode='eval')

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[1]

    def parameter_digest(self) -> str:
        return self._train_network.parameter_digest()

    def __repr__(self):
        return f"EarlyFusionModule({self.module_id!r}, parameters={self._train_network.num_parameters()})"


def _head(module_id: str, rep_dim: int, rng: np.random.Generator, dtype) -> Network:
    return Network([
        Linear(rep_dim, 1, rng, dtype=dtype, name=f"{module_id}.head"),
        Activation('sigmoid', name=f"{module_id}.head_sigmoid"),
    ], name=f"{module_id}.head")


def build_sequence_cnn(module_id: str, config: SequenceCnnConfig, seed: int = 0, dtype=np.float32) -> EarlyFusionModule:
    """
    Filepath / API-sequence network

    Embedding(V+2, H) -> conv widths {2,3,4,5} x C channels with global max pooling
    -> ReLU -> [Linear -> BatchNorm -> ReLU -> Dropout] per hidden width
    -> Linear -> BatchNorm -> sigmoid representation
    """
    rng, dropout_seed = _seeded(seed)
    layers = [
        Embedding(config.embedding_rows, config.embed_dim, rng, dtype=dtype, name=f"{module_id}.embedding"),
        ParallelConcat([
            Conv1dMaxPool(config.embed_dim, config.channels, width, rng, dtype=dtype, name=f"{module_id}.conv{width}")
            for width in config.kernel_widths
        ], name=f"{module_id}.convs"),
        Activation('relu', name=f"{module_id}.conv_relu"),
    ]
    fan_in = config.channels * len(config.kernel_widths)
    for index, width in enumerate(config.widths[:-1]):
        layers += [
            Linear(fan_in, width, rng, dtype=dtype, name=f"{module_id}.dense{index}"),
            BatchNorm(width, dtype=dtype, name=f"{module_id}.bn{index}"),
            Activation('relu', name=f"{module_id}.relu{index}"),
            Dropout(config.dropout, rng, name=f"{module_id}.dropout{index}"),
        ]
        fan_in = width
    last = len(config.widths) - 1
    layers += [
        Linear(fan_in, config.representation_dim, rng, dtype=dtype, name=f"{module_id}.dense{last}"),
        BatchNorm(config.representation_dim, dtype=dtype, name=f"{module_id}.bn{last}"),
        Activation('sigmoid', name=f"{module_id}.representation"),
    ]
    body = Network(layers, name=f"{module_id}.body")
    head = _head(module_id, config.representation_dim, rng, dtype)
    body.reseed(dropout_seed)
    return EarlyFusionModule(module_id, config, body, head)


def build_ember_ffnn(config: EmberFfnnConfig, seed: int = 0, dtype=np.float32, module_id: str = 'emb') -> EarlyFusionModule:
    """
    Static-vector network

    [Linear -> LayerNorm -> ELU -> Dropout] per hidden width, then
    Linear -> LayerNorm -> sigmoid representation
    """
    rng, dropout_seed = _seeded(seed)
    layers = []
    fan_in = config.input_dim
    for index, width in enumerate(config.hidden[:-1]):
        layers += [
            Linear(fan_in, width, rng, dtype=dtype, name=f"{module_id}.dense{index}"),
            LayerNorm(width, dtype=dtype, name=f"{module_id}.ln{index}"),
            Activation(config.activation, name=f"{module_id}.{config.activation}{index}"),
            Dropout(config.dropout, rng, name=f"{module_id}.dropout{index}"),
        ]
        fan_in = width
    last = len(config.hidden) - 1
    layers += [
        Linear(fan_in, config.representation_dim, rng, dtype=dtype, name=f"{module_id}.dense{last}"),
        LayerNorm(config.representation_dim, dtype=dtype, name=f"{module_id}.ln{last}"),
        Activation('sigmoid', name=f"{module_id}.representation"),
    ]
    body = Network(layers, name=f"{module_id}.body")
    head = _head(module_id, config.representation_dim, rng, dtype)
    body.reseed(dropout_seed)
    return EarlyFusionModule(module_id, config, body, head)


def build_module(module_id: str, config: ModuleConfig, seed: int = 0, dtype=np.float32) -> EarlyFusionModule:
    if isinstance(config, SequenceCnnConfig):
        return build_sequence_cnn(module_id, config, seed=seed, dtype=dtype)
    return build_ember_ffnn(config, seed=seed, dtype=dtype, module_id=module_id)


class MetaModel:
    """
    Classifier over fusion vectors of one module subset

    Args:
        subset: Module ids in concatenation order
        config: LR or FFNN configuration
        network: Network ending in a sigmoid
    """

    def __init__(self, subset: Sequence[str], config: MetaModelConfig, network: Network):
        self.subset = canonical_subset(subset)
        self.config = config
        self.network = network
        self.featurizer_hashes: Dict[str, str] = {}
        self.threshold: Optional[float] = None

    @property
    def input_dim(self) -> int:
        return 128 * len(self.subset)

    @property
    def label(self) -> str:
        return subset_label(self.subset)

    def signature(self) -> Dict:
        return {'subset': list(self.subset), 'order': list(MODULE_ORDER)}

    def predict(self, fusion: np.ndarray) -> np.ndarray:
        fusion = np.asarray(fusion)
        if fusion.ndim != 2 or fusion.shape[1] != self.input_dim:
            raise DimensionError(f"meta[{self.label}]: expected fusion vectors of width {self.input_dim}, got {fusion.shape}")
        return self.network.forward(fusion.astype(self.network.parameters()[0].dtype, copy=False), mode='eval')[:, 0]

    def __repr__(self):
        return f"MetaModel({self.label!r}, kind={self.config.kind!r}, hidden={self.config.hidden})"


def build_meta_model(subset: Sequence[str], config: Optional[MetaModelConfig] = None, seed: int = 0,
                     dtype=np.float32) -> MetaModel:
    """
    Logistic regression (zero-initialized) or an FFNN with ReLU hidden layers, sigmoid output
    """
    config = config or MetaModelConfig()
    subset = canonical_subset(subset)
    rng, _ = _seeded(seed)
    input_dim = 128 * len(subset)
    layers = []
    if config.kind == 'logistic_regression':
        layers.append(Linear(input_dim, 1, rng, dtype=dtype, name='meta.linear', zero_init=True))
    else:
        fan_in = input_dim
        for index, width in enumerate(config.hidden):
            layers += [
                Linear(fan_in, width, rng, dtype=dtype, name=f"meta.dense{index}"),
                Activation('relu', name=f"meta.relu{index}"),
            ]
            fan_in = width
        layers.append(Linear(fan_in, 1, rng, dtype=dtype, name='meta.output'))
    layers.append(Activation('sigmoid', name='meta.sigmoid'))
    return MetaModel(subset, config, Network(layers, name=f"meta[{subset_label(subset)}]"))


def module_forward(module: EarlyFusionModule, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(representation, score) of an early-fusion module in eval mode"""
    return module.forward(x)


def early_fusion(inputs: Mapping[str, np.ndarray], modules: Mapping[str, EarlyFusionModule],
                 subset: Optional[Sequence[str]] = None) -> np.ndarray:
    """
    Concatenate representations in the fixed order fp, api, emb

    Args:
        inputs: Encoded batch per module id
        modules: Loaded early-fusion modules
        subset: Modules to fuse (all three when None)

    Returns:
        (batch, 128 * len(subset)) fusion vectors
    """
    subset = canonical_subset(subset if subset is not None else MODULE_ORDER)
    missing = [m for m in subset if m not in modules or m not in inputs]
    if missing:
        raise ConfigurationError(
            f"fusion over {subset_label(subset)} needs modules {missing}; route such samples to a subset meta-model"
        )
    parts = [modules[m].represent(inputs[m]) for m in subset]
    batch_sizes = {part.shape[0] for part in parts}
    if len(batch_sizes) != 1:
        raise DimensionError(f"modules returned different batch sizes {sorted(batch_sizes)}")
    return np.concatenate(parts, axis=1)


def meta_predict(meta: MetaModel, fusion: np.ndarray, subset: Optional[Sequence[str]] = None) -> np.ndarray:
    """Meta-model probabilities; `subset` is the signature the fusion vectors were built with"""
    if subset is not None and canonical_subset(subset) != meta.subset:
        raise ConfigurationError(
            f"meta-model trained on {meta.label} cannot score fusion vectors of {subset_label(subset)}"
        )
    return meta.predict(fusion)
