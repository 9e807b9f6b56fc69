"""
Mini-batch training for early-fusion modules and meta-models
BCE loss, Adam, best-validation-F1 checkpointing with early stopping
"""
import logging
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import f1_score
from tqdm import tqdm

from src.fusion.modules import EarlyFusionModule, MetaModel
from src.nn_core.functional import bce_loss
from src.nn_core.network import Network, backward
from src.nn_core.optim import Adam
from src.training.metrics import roc_auc
from src.utils.errors import DimensionError, InputError, NumericError, UndefinedMetricError

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ['epoch', 'train_loss', 'valid_loss', 'valid_f1', 'valid_auc']


class TrainPlan(BaseModel):
    """Optimization settings for one network"""

    module_id: str
    seed: int
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(1024, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    patience: int = Field(10, ge=1)
    decision_threshold: float = Field(0.5, gt=0, lt=1)
    show_progress: bool = False


class TrainResult(BaseModel):
    model_config = {'arbitrary_types_allowed': True}

    history: pd.DataFrame
    best_epoch: Optional[int] = None
    best_f1: Optional[float] = None
    wall_time: float = 0.0
    epochs_run: int = 0


def _check_labels(y: np.ndarray, n: int, name: str) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.size != n:
        raise DimensionError(f"{name}: {n} inputs but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise InputError(f"{name}: labels must be 0 or 1")
    return y.astype(np.float64)


def _predict(network: Network, x: np.ndarray, batch_size: int) -> np.ndarray:
    parts = [network.forward(x[start:start + batch_size], mode='eval')[:, 0]
             for start in range(0, x.shape[0], batch_size)]
    return np.concatenate(parts) if parts else np.zeros(0)


def fit_network(network: Network, x_train: np.ndarray, y_train: np.ndarray,
                x_valid: Optional[np.ndarray], y_valid: Optional[np.ndarray], plan: TrainPlan) -> TrainResult:
    """
    Train a sigmoid-output network in place

    Shuffling and dropout masks are drawn from plan.seed, so the same plan on the
    same initial network reproduces the run exactly. The parameters of the epoch
    with the best validation F1 are restored at the end.

    Returns:
        TrainResult whose history has one row per epoch run
    """
    y_train = _check_labels(y_train, x_train.shape[0], f"{plan.module_id} train")
    has_valid = x_valid is not None and y_valid is not None and len(x_valid) > 0
    if has_valid:
        y_valid = _check_labels(y_valid, x_valid.shape[0], f"{plan.module_id} valid")

    rng = np.random.default_rng(plan.seed)
    network.reseed(plan.seed)
    optimizer = Adam(network, learning_rate=plan.learning_rate)
    history: List[Dict] = []
    best_state, best_f1, best_epoch = None, -np.inf, None
    stale = 0
    started = time.perf_counter()

    quiet = not plan.show_progress or logger.getEffectiveLevel() > logging.INFO
    epochs = tqdm(range(1, plan.epochs + 1), desc=f"train {plan.module_id}", disable=quiet)
    for epoch in epochs:
        order = rng.permutation(x_train.shape[0])
        weighted_loss = 0.0
        for start in range(0, order.size, plan.batch_size):
            idx = order[start:start + plan.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            network.zero_grad()
            output = network.forward(xb, mode='train')
            loss = bce_loss(output, yb)
            if not np.isfinite(loss):
                raise NumericError(f"{plan.module_id}: training diverged at epoch {epoch} (loss {loss})")
            backward(network, xb, yb)
            optimizer.step()
            weighted_loss += loss * idx.size
        train_loss = weighted_loss / max(order.size, 1)

        row = {'epoch': epoch, 'train_loss': train_loss, 'valid_loss': np.nan, 'valid_f1': np.nan, 'valid_auc': np.nan}
        if has_valid:
            scores = _predict(network, x_valid, plan.batch_size)
            row['valid_loss'] = bce_loss(scores, y_valid)
            row['valid_f1'] = float(f1_score(y_valid, scores >= plan.decision_threshold, zero_division=0))
            try:
                row['valid_auc'] = roc_auc(scores, y_valid)
            except UndefinedMetricError:
                pass
            if row['valid_f1'] > best_f1:
                best_f1, best_epoch, stale = row['valid_f1'], epoch, 0
                best_state = network.copy_state()
            else:
                stale += 1
        history.append(row)
        epochs.set_postfix(loss=f"{train_loss:.4f}", f1=f"{row['valid_f1']:.4f}")
        logger.debug(f"{plan.module_id} epoch {epoch}: train_loss={train_loss:.5f} valid_f1={row['valid_f1']:.4f}")

        if has_valid and stale >= plan.patience:
            logger.info(f"Early stopping {plan.module_id} at epoch {epoch} (best epoch {best_epoch})")
            break

    if best_state is not None:
        network.load_state(best_state)

    wall_time = time.perf_counter() - started
    frame = pd.DataFrame(history, columns=HISTORY_COLUMNS)
    if history:
        logger.info(f"✅ Trained {plan.module_id}: {len(history)} epochs, "
                    f"best valid F1 {best_f1 if best_epoch else float('nan'):.4f} at epoch {best_epoch}")
    return TrainResult(
        history=frame,
        best_epoch=best_epoch,
        best_f1=float(best_f1) if best_epoch is not None else None,
        wall_time=wall_time,
        epochs_run=len(history),
    )


def pretrain_module(module: EarlyFusionModule, train: Tuple[np.ndarray, np.ndarray],
                    valid: Optional[Tuple[np.ndarray, np.ndarray]], plan: TrainPlan) -> Tuple[EarlyFusionModule, pd.DataFrame]:
    """
    Pre-train an early-fusion module through its own sigmoid head

    Args:
        module: Freshly built (or previously trained) module
        train: (inputs, labels)
        valid: (inputs, labels) for F1-based model selection, or None

    Returns:
        (module, history)
    """
    logger.info(f"🚀 Pre-training module {module.module_id} on {len(train[1])} samples")
    x_train = module.prepare(train[0])
    x_valid = module.prepare(valid[0]) if valid is not None else None
    result = fit_network(module.train_network(), x_train, train[1], x_valid,
                         valid[1] if valid is not None else None, plan)
    return module, result.history


def train_meta_model(meta: MetaModel, train: Tuple[np.ndarray, np.ndarray],
                     valid: Optional[Tuple[np.ndarray, np.ndarray]], plan: TrainPlan) -> Tuple[MetaModel, TrainResult]:
    """
    Train a meta-model on precomputed fusion vectors; early-fusion modules are never touched

    Args:
        meta: Meta-model for one subset
        train: (fusion vectors, labels)
        valid: (fusion vectors, labels) or None
    """
    dtype = meta.network.parameters()[0].dtype
    x_train = np.asarray(train[0], dtype=dtype)
    if x_train.ndim != 2 or x_train.shape[1] != meta.input_dim:
        raise DimensionError(f"meta[{meta.label}]: fusion vectors of width {meta.input_dim} expected, got {x_train.shape}")
    x_valid = np.asarray(valid[0], dtype=dtype) if valid is not None else None
    logger.info(f"🚀 Training meta-model {meta.label} ({meta.config.label}) on {x_train.shape[0]} fusion vectors")
    result = fit_network(meta.network, x_train, train[1], x_valid, valid[1] if valid is not None else None, plan)
    return meta, result
