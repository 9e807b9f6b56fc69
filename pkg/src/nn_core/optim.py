"""
Adam optimizer over a flat view of all parameters
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.utils.errors import DimensionError, NumericError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Adam moments for a flattened parameter vector"""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_parameters(cls, params: List[np.ndarray], learning_rate: float = 1e-3, **kwargs) -> 'AdamState':
        size = int(sum(p.size for p in params))
        return cls(m=np.zeros(size), v=np.zeros(size), learning_rate=learning_rate, **kwargs)


def adam_step(state: AdamState, params: List[np.ndarray], grads: List[np.ndarray]) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update, applied to `params` in place

    Args:
        state: Moments and hyperparameters; `step` is incremented
        params: Parameter arrays in a fixed order
        grads: Gradients matching `params` one to one

    Returns:
        (params, state)
    """
    if len(params) != len(grads):
        raise DimensionError(f"adam_step: {len(params)} parameter arrays but {len(grads)} gradients")
    for index, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"adam_step: parameter {index} shape {p.shape} != gradient shape {g.shape}")

    flat_grad = np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in grads]) if grads else np.zeros(0)
    if flat_grad.size != state.m.size:
        raise DimensionError(f"adam_step: state holds {state.m.size} moments for {flat_grad.size} parameters")
    if not np.all(np.isfinite(flat_grad)):
        raise NumericError(f"adam_step: non-finite gradient at step {state.step + 1}, update aborted")

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * flat_grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * flat_grad * flat_grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)

    offset = 0
    for p in params:
        size = p.size
        p -= update[offset:offset + size].reshape(p.shape).astype(p.dtype)
        offset += size
    return params, state


class Adam:
    """Binds an AdamState to a network's parameter list"""

    def __init__(self, network, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.network = network
        self.state = AdamState.for_parameters(
            network.parameters(), learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps
        )

    def step(self):
        adam_step(self.state, self.network.parameters(), self.network.gradients())
