"""
Layer implementations for the numpy network engine
A train-mode forward caches what backward needs; eval-mode forward touches no state
"""
import logging
from typing import Dict, List, Optional

import numpy as np

from src.nn_core.functional import ACTIVATIONS, activation_grad, activations
from src.utils.errors import DimensionError, StateError, TokenRangeError

logger = logging.getLogger(__name__)

MODES = ('train', 'eval')


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def he_uniform(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """
    Base layer

    Subclasses fill `params` (trainable), `buffers` (saved, not trained) and
    write matching entries into `grads` during backward.
    """

    kind = 'layer'

    def __init__(self, name: str = ''):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Optional[np.ndarray]:
        raise NotImplementedError

    def hyper(self) -> Dict:
        return {}

    def children(self) -> List['Layer']:
        return []

    def zero_grad(self):
        self.grads = {key: np.zeros_like(value) for key, value in self.params.items()}

    def _require_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name or self.kind}: backward called before a train-mode forward")
        return self._cache

    def __repr__(self):
        shapes = {key: value.shape for key, value in self.params.items()}
        return f"{type(self).__name__}(name={self.name!r}, params={shapes})"


class Embedding(Layer):
    """Token lookup: (batch, length) int ids -> (batch, length, dim)"""

    kind = 'embedding'

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, dtype=np.float32, name: str = 'embedding'):
        super().__init__(name)
        self.vocab_size = vocab_size
        self.dim = dim
        self.params['weight'] = rng.uniform(-0.05, 0.05, size=(vocab_size, dim)).astype(dtype)

    def hyper(self) -> Dict:
        return {'vocab_size': self.vocab_size, 'dim': self.dim}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        ids = np.asarray(x)
        if ids.ndim != 2 or (ids.size and ids.dtype.kind not in 'iu'):
            raise DimensionError(f"{self.name}: expected integer ids of shape (batch, length), got {ids.dtype} {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise TokenRangeError(
                f"{self.name}: token id out of range [0, {self.vocab_size}) "
                f"(min={int(ids.min())}, max={int(ids.max())})"
            )
        if mode == 'train':
            self._cache = ids
        return self.params['weight'][ids]

    def backward(self, grad: np.ndarray) -> None:
        ids = self._require_cache()
        weight = self.params['weight']
        d_weight = np.zeros_like(weight)
        np.add.at(d_weight, ids.reshape(-1), grad.reshape(-1, self.dim).astype(weight.dtype))
        self.grads['weight'] = d_weight
        return None


class Conv1dMaxPool(Layer):
    """
    Valid 1-D cross-correlation over the sequence axis, then global max pooling over time

    Input (batch, length, in_channels) -> output (batch, out_channels).
    The kernel is stored as a (width * in_channels, out_channels) matrix whose
    row block j multiplies sequence offset j.
    """

    kind = 'conv1d'

    def __init__(self, in_channels: int, out_channels: int, width: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = 'conv1d'):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.width = width
        fan_in = width * in_channels
        self.params['weight'] = he_uniform(rng, fan_in, (fan_in, out_channels), dtype)
        self.params['bias'] = np.zeros(out_channels, dtype=dtype)

    def hyper(self) -> Dict:
        return {'in_channels': self.in_channels, 'out_channels': self.out_channels, 'width': self.width}

    def _kernel(self, offset: int) -> np.ndarray:
        h = self.in_channels
        return self.params['weight'][offset * h:(offset + 1) * h]

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise DimensionError(f"{self.name}: expected (batch, length, {self.in_channels}), got {x.shape}")
        length = x.shape[1]
        if length < self.width:
            raise DimensionError(f"{self.name}: sequence length {length} shorter than kernel width {self.width}")

        steps = length - self.width + 1
        conv = x[:, 0:steps] @ self._kernel(0)
        for offset in range(1, self.width):
            conv += x[:, offset:offset + steps] @ self._kernel(offset)
        conv += self.params['bias']

        argmax = conv.argmax(axis=1)
        pooled = np.take_along_axis(conv, argmax[:, None, :], axis=1)[:, 0, :]
        if mode == 'train':
            self._cache = (x, argmax, steps)
        return pooled

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x, argmax, steps = self._require_cache()
        batch, _, h = x.shape
        weight = self.params['weight']

        # only the pooled position of each (sample, channel) receives gradient
        d_conv = np.zeros((batch, steps, self.out_channels), dtype=weight.dtype)
        np.put_along_axis(d_conv, argmax[:, None, :], grad[:, None, :].astype(weight.dtype), axis=1)
        d_conv_flat = d_conv.reshape(-1, self.out_channels)

        d_weight = np.empty_like(weight)
        d_x = np.zeros_like(x)
        for offset in range(self.width):
            window = x[:, offset:offset + steps]
            d_weight[offset * h:(offset + 1) * h] = window.reshape(-1, h).T @ d_conv_flat
            d_x[:, offset:offset + steps] += d_conv @ self._kernel(offset).T

        self.grads['weight'] = d_weight
        self.grads['bias'] = grad.sum(axis=0).astype(weight.dtype)
        return d_x


class Linear(Layer):
    kind = 'linear'

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = 'linear', zero_init: bool = False):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            self.params['weight'] = np.zeros((in_features, out_features), dtype=dtype)
        else:
            self.params['weight'] = he_uniform(rng, in_features, (in_features, out_features), dtype)
        self.params['bias'] = np.zeros(out_features, dtype=dtype)

    def hyper(self) -> Dict:
        return {'in_features': self.in_features, 'out_features': self.out_features}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"{self.name}: expected (batch, {self.in_features}), got {x.shape}")
        if mode == 'train':
            self._cache = x
        return x @ self.params['weight'] + self.params['bias']

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._require_cache()
        weight = self.params['weight']
        self.grads['weight'] = (x.T @ grad).astype(weight.dtype)
        self.grads['bias'] = grad.sum(axis=0).astype(weight.dtype)
        return grad @ weight.T


class BatchNorm(Layer):
    """Batch normalization over the feature axis of (batch, features) input"""

    kind = 'batchnorm'

    def __init__(self, features: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = 'batchnorm'):
        super().__init__(name)
        self.features = features
        self.momentum = momentum
        self.eps = eps
        self.params['gamma'] = np.ones(features, dtype=dtype)
        self.params['beta'] = np.zeros(features, dtype=dtype)
        self.buffers['running_mean'] = np.zeros(features, dtype=dtype)
        self.buffers['running_var'] = np.ones(features, dtype=dtype)
        self.buffers['batches_tracked'] = np.zeros(1, dtype=dtype)
        self._warned_untrained = False

    def hyper(self) -> Dict:
        return {'features': self.features, 'momentum': self.momentum, 'eps': self.eps}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.features:
            raise DimensionError(f"{self.name}: expected (batch, {self.features}), got {x.shape}")
        gamma, beta = self.params['gamma'], self.params['beta']

        if mode == 'eval':
            if self.buffers['batches_tracked'][0] < 1 and not self._warned_untrained:
                logger.warning(f"⚠️  {self.name}: eval mode before any training step, using initial statistics")
                self._warned_untrained = True
            inv_std = 1.0 / np.sqrt(self.buffers['running_var'] + self.eps)
            return (x - self.buffers['running_mean']) * inv_std * gamma + beta

        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std

        batch = x.shape[0]
        unbiased = var * batch / (batch - 1) if batch > 1 else var
        m = self.momentum
        self.buffers['running_mean'] = ((1 - m) * self.buffers['running_mean'] + m * mean).astype(x.dtype)
        self.buffers['running_var'] = ((1 - m) * self.buffers['running_var'] + m * unbiased).astype(x.dtype)
        self.buffers['batches_tracked'] = self.buffers['batches_tracked'] + 1

        self._cache = (x_hat, inv_std)
        return x_hat * gamma + beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x_hat, inv_std = self._require_cache()
        gamma = self.params['gamma']
        batch = grad.shape[0]
        self.grads['gamma'] = (grad * x_hat).sum(axis=0).astype(gamma.dtype)
        self.grads['beta'] = grad.sum(axis=0).astype(gamma.dtype)
        d_hat = grad * gamma
        return (inv_std / batch) * (
            batch * d_hat - d_hat.sum(axis=0) - x_hat * (d_hat * x_hat).sum(axis=0)
        )


class LayerNorm(Layer):
    """Layer normalization over the feature axis of each row"""

    kind = 'layernorm'

    def __init__(self, features: int, dtype=np.float32, eps: float = 1e-5, name: str = 'layernorm'):
        super().__init__(name)
        self.features = features
        self.eps = eps
        self.params['gamma'] = np.ones(features, dtype=dtype)
        self.params['beta'] = np.zeros(features, dtype=dtype)

    def hyper(self) -> Dict:
        return {'features': self.features, 'eps': self.eps}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.features:
            raise DimensionError(f"{self.name}: expected (batch, {self.features}), got {x.shape}")
        mean = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        if mode == 'train':
            self._cache = (x_hat, inv_std)
        return x_hat * self.params['gamma'] + self.params['beta']

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x_hat, inv_std = self._require_cache()
        gamma = self.params['gamma']
        width = grad.shape[1]
        self.grads['gamma'] = (grad * x_hat).sum(axis=0).astype(gamma.dtype)
        self.grads['beta'] = grad.sum(axis=0).astype(gamma.dtype)
        d_hat = grad * gamma
        return (inv_std / width) * (
            width * d_hat
            - d_hat.sum(axis=1, keepdims=True)
            - x_hat * (d_hat * x_hat).sum(axis=1, keepdims=True)
        )


class Dropout(Layer):
    """Inverted dropout: train-mode outputs are scaled by 1/(1-p), eval mode is the identity"""

    kind = 'dropout'

    def __init__(self, rate: float, rng: np.random.Generator, name: str = 'dropout'):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._identity = False

    def hyper(self) -> Dict:
        return {'rate': self.rate}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        if mode == 'eval' or self.rate == 0.0:
            if mode == 'train':
                self._cache = None
                self._identity = True
            return x
        mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        self._cache = mask
        self._identity = False
        return x * mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._identity:
            return grad
        return grad * self._require_cache()


class Activation(Layer):
    kind = 'activation'

    def __init__(self, fn: str, name: str = ''):
        super().__init__(name or fn)
        if fn not in ACTIVATIONS:
            raise ValueError(f"Unknown activation: {fn}")
        self.fn = fn

    def hyper(self) -> Dict:
        return {'fn': self.fn}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        out = activations(x, self.fn)
        if mode == 'train':
            self._cache = (x, out)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x, out = self._require_cache()
        return activation_grad(self.fn, x, out, grad).astype(x.dtype)


class ParallelConcat(Layer):
    """Feed one input to several branches and concatenate their outputs on the last axis"""

    kind = 'parallel'

    def __init__(self, branches: List[Layer], name: str = 'parallel'):
        super().__init__(name)
        self.branches = branches

    def children(self) -> List[Layer]:
        return list(self.branches)

    def hyper(self) -> Dict:
        return {'branches': [branch.name for branch in self.branches]}

    def forward(self, x: np.ndarray, mode: str = 'train') -> np.ndarray:
        _check_mode(mode)
        outputs = [branch.forward(x, mode) for branch in self.branches]
        if mode == 'train':
            self._cache = [out.shape[-1] for out in outputs]
        return np.concatenate(outputs, axis=-1)

    def backward(self, grad: np.ndarray) -> Optional[np.ndarray]:
        widths = self._require_cache()
        d_input = None
        start = 0
        for branch, width in zip(self.branches, widths):
            d_branch = branch.backward(grad[..., start:start + width])
            start += width
            if d_branch is not None:
                d_input = d_branch if d_input is None else d_input + d_branch
        return d_input
