"""
Sequential network container and the loss-driven backward pass
"""
import hashlib
import logging
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.nn_core.functional import bce_grad
from src.nn_core.layers import Dropout, Layer
from src.utils.errors import DimensionError, NumericError, StateError

logger = logging.getLogger(__name__)


class Network:
    """
    Ordered stack of layers with a shared forward/backward protocol

    Args:
        layers: Layers in execution order (nested branches allowed via ParallelConcat)
        name: Prefix used in diagnostics
    """

    def __init__(self, layers: List[Layer], name: str = 'network'):
        self.layers = list(layers)
        self.name = name
        self._forward_ready = False
        self._input_shape: Optional[Tuple[int, ...]] = None
        self._last_output: Optional[np.ndarray] = None

        seen = set()
        for layer in self.iter_layers():
            if layer.name in seen:
                raise ValueError(f"{name}: duplicate layer name {layer.name!r}")
            seen.add(layer.name)

    def iter_layers(self) -> Iterator[Layer]:
        """Depth-first walk in declaration order, branch layers included"""
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            stack.extend(reversed(layer.children()))

    def forward(self, x: np.ndarray, mode: str = 'eval') -> np.ndarray:
        out = x
        for layer in self.layers:
            out = layer.forward(out, mode)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{self.name}: non-finite activations in {mode} forward pass")
        if mode == 'train':
            self._forward_ready = True
            self._input_shape = np.shape(x)
            self._last_output = out
        return out

    def backward(self, grad: np.ndarray) -> Optional[np.ndarray]:
        """Propagate an upstream gradient through every layer; returns d(input) when defined"""
        if not self._forward_ready:
            raise StateError(f"{self.name}: backward called before a train-mode forward pass")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        self._forward_ready = False
        return grad

    @property
    def last_output(self) -> Optional[np.ndarray]:
        return self._last_output

    @property
    def forward_ready(self) -> bool:
        return self._forward_ready

    @property
    def input_shape(self) -> Optional[Tuple[int, ...]]:
        return self._input_shape

    def named_parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [
            (f"{layer.name}.{key}", value)
            for layer in self.iter_layers()
            for key, value in layer.params.items()
        ]

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        return [
            (f"{layer.name}.{key}", value)
            for layer in self.iter_layers()
            for key, value in layer.buffers.items()
        ]

    def named_state(self) -> List[Tuple[str, np.ndarray]]:
        """Parameters followed by buffers, the order used by checkpoints"""
        return self.named_parameters() + self.named_buffers()

    def parameters(self) -> List[np.ndarray]:
        return [value for _, value in self.named_parameters()]

    def gradients(self) -> List[np.ndarray]:
        grads = []
        for layer in self.iter_layers():
            for key, value in layer.params.items():
                grads.append(layer.grads.get(key, np.zeros_like(value)))
        return grads

    def named_gradients(self) -> Dict[str, np.ndarray]:
        names = [name for name, _ in self.named_parameters()]
        return dict(zip(names, self.gradients()))

    def zero_grad(self):
        for layer in self.iter_layers():
            layer.zero_grad()

    def load_state(self, state: Dict[str, np.ndarray]):
        """Assign parameters and buffers by qualified name, checking every shape"""
        for layer in self.iter_layers():
            for store in (layer.params, layer.buffers):
                for key, current in store.items():
                    qualified = f"{layer.name}.{key}"
                    if qualified not in state:
                        raise DimensionError(f"{self.name}: state is missing {qualified}")
                    value = np.asarray(state[qualified])
                    if value.shape != current.shape:
                        raise DimensionError(
                            f"{qualified}: expected shape {current.shape}, got {value.shape}"
                        )
                    store[key] = value.astype(current.dtype, copy=True)

    def copy_state(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.named_state()}

    def reseed(self, seed: int):
        """Give every dropout layer its own generator derived from `seed`"""
        dropouts = [layer for layer in self.iter_layers() if isinstance(layer, Dropout)]
        children = np.random.SeedSequence(seed).spawn(len(dropouts))
        for layer, child in zip(dropouts, children):
            layer.rng = np.random.default_rng(child)

    def parameter_digest(self) -> str:
        """SHA-256 over parameters and buffers, used to prove a network stayed frozen"""
        digest = hashlib.sha256()
        for name, value in self.named_state():
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(value).tobytes())
        return digest.hexdigest()

    def layer_manifest(self) -> List[Dict]:
        return [
            {
                'name': layer.name,
                'kind': layer.kind,
                'hyper': layer.hyper(),
                'shapes': {key: list(value.shape) for key, value in {**layer.params, **layer.buffers}.items()},
            }
            for layer in self.iter_layers()
        ]

    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.parameters()))


def backward(network: Network, inputs: np.ndarray, targets: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Gradient of the mean BCE loss w.r.t. every parameter

    The network must end in a sigmoid and must have run a train-mode forward on `inputs`.

    Args:
        network: Network holding the cached forward pass
        inputs: The batch that was forwarded (shape is verified)
        targets: Labels in {0, 1}

    Returns:
        Mapping of qualified parameter name to gradient
    """
    if not network.forward_ready:
        raise StateError(f"{network.name}: backward called before a train-mode forward pass")
    if tuple(np.shape(inputs)) != tuple(network.input_shape):
        raise DimensionError(
            f"{network.name}: backward inputs {np.shape(inputs)} differ from forwarded {network.input_shape}"
        )
    output = network.last_output
    upstream = bce_grad(output, targets).reshape(output.shape).astype(output.dtype)
    network.backward(upstream)
    return network.named_gradients()
