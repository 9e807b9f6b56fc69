"""
Stateless activation and loss functions
"""
import numpy as np

from src.utils.errors import DimensionError

PROB_EPS = 1e-7
ACTIVATIONS = ('relu', 'elu', 'sigmoid')


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def elu(x: np.ndarray) -> np.ndarray:
    """ELU with alpha = 1"""
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, clamped to [eps, 1 - eps] so log terms stay finite"""
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, PROB_EPS, 1.0 - PROB_EPS).astype(x.dtype if x.dtype.kind == 'f' else np.float64)


def activations(x: np.ndarray, kind: str) -> np.ndarray:
    """
    Apply a named activation

    Args:
        x: Finite real array
        kind: 'relu', 'elu' or 'sigmoid'

    Returns:
        Array of the same shape
    """
    if kind == 'relu':
        return relu(x)
    if kind == 'elu':
        return elu(x)
    if kind == 'sigmoid':
        return sigmoid(x)
    raise ValueError(f"Unknown activation: {kind}")


def activation_grad(kind: str, x: np.ndarray, out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient through an activation given its input, output and upstream gradient"""
    if kind == 'relu':
        return grad * (x > 0)
    if kind == 'elu':
        return grad * np.where(x > 0, 1.0, out + 1.0)
    if kind == 'sigmoid':
        return grad * out * (1.0 - out)
    raise ValueError(f"Unknown activation: {kind}")


def _check_pair(pred: np.ndarray, target: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise DimensionError(f"bce_loss: prediction length {pred.size} != target length {target.size}")
    return np.clip(pred, PROB_EPS, 1.0 - PROB_EPS), target


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """
    Mean binary cross-entropy, -[y log p + (1 - y) log(1 - p)]

    Args:
        pred: Probabilities, clamped to [eps, 1 - eps]
        target: Labels in {0, 1}

    Returns:
        Non-negative mean loss
    """
    p, y = _check_pair(pred, target)
    if p.size == 0:
        return 0.0
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(np.mean(losses))


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(bce_loss)/d(pred), same layout as the flattened prediction"""
    p, y = _check_pair(pred, target)
    return (p - y) / (p * (1.0 - p)) / max(p.size, 1)
