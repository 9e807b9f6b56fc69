"""
Fusion experiment: meta-models for every module subset, the detection-rate
grid over FPR levels, and the meta-model architecture comparison
"""
import logging
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.fusion.configs import MODULE_ORDER, MetaModelConfig, all_subsets, canonical_subset, comparison_configs, subset_label
from src.fusion.modules import EarlyFusionModule, MetaModel, build_meta_model
from src.training.metrics import DEFAULT_FPR_GRID, detection_rate_grid, evaluate_scores
from src.training.trainer import TrainPlan, TrainResult, train_meta_model

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ['model', 'kind', 'hidden', 'parameters', 'epochs', 'auc', 'f1', 'precision', 'recall', 'accuracy']


class FusionSet(NamedTuple):
    """Per-module representations of one split, with availability masks"""

    representations: Dict[str, np.ndarray]
    available: Dict[str, np.ndarray]
    labels: np.ndarray
    families: np.ndarray

    def rows_with(self, modules: Sequence[str]) -> np.ndarray:
        mask = np.ones(self.labels.size, dtype=bool)
        for module_id in modules:
            mask &= self.available[module_id]
        return np.flatnonzero(mask)

    def select(self, subset: Sequence[str], rows: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """(fusion vectors, labels) over `rows` (default: rows where every subset module is available)"""
        subset = canonical_subset(subset)
        rows = self.rows_with(subset) if rows is None else rows
        fusion = np.concatenate([self.representations[m][rows] for m in subset], axis=1)
        return fusion, self.labels[rows]


def build_fusion_set(modules: Mapping[str, EarlyFusionModule], inputs: Mapping[str, np.ndarray],
                     available: Mapping[str, np.ndarray], labels: np.ndarray, families: Sequence[str],
                     batch_size: int = 1024) -> FusionSet:
    """
    Run every loaded module over the rows where its modality exists

    Rows without the modality keep an all-zero representation and are never
    selected for a subset containing that module.
    """
    labels = np.asarray(labels).astype(np.int64)
    representations, masks = {}, {}
    for module_id in MODULE_ORDER:
        mask = np.asarray(available.get(module_id, np.zeros(labels.size, dtype=bool)), dtype=bool)
        rep = np.zeros((labels.size, 128), dtype=np.float32)
        if module_id in modules:
            rows = np.flatnonzero(mask)
            for start in range(0, rows.size, batch_size):
                chunk = rows[start:start + batch_size]
                rep[chunk] = modules[module_id].represent(inputs[module_id][chunk])
        else:
            mask = np.zeros(labels.size, dtype=bool)
        representations[module_id] = rep
        masks[module_id] = mask
    return FusionSet(representations, masks, labels, np.asarray(families, dtype=object))


class ExperimentResult(NamedTuple):
    grid: pd.DataFrame
    metas: Dict[str, Optional[MetaModel]]
    histories: Dict[str, pd.DataFrame]


def _both_classes(labels: np.ndarray) -> bool:
    return labels.size > 0 and labels.min() != labels.max()


def train_subset_meta(subset: Sequence[str], train: FusionSet, valid: Optional[FusionSet],
                      config: MetaModelConfig, plan: TrainPlan) -> Tuple[Optional[MetaModel], Optional[TrainResult]]:
    """Train one meta-model; returns (None, None) when the training rows cannot support it"""
    label = subset_label(subset)
    x_train, y_train = train.select(subset)
    if not _both_classes(y_train):
        logger.warning(f"⚠️  Meta-model {label}: training rows lack a class, subset left absent")
        return None, None
    valid_pair = valid.select(subset) if valid is not None else None
    meta = build_meta_model(subset, config, seed=plan.seed)
    meta_plan = plan.model_copy(update={'module_id': f"meta-{label}"})
    meta, result = train_meta_model(meta, (x_train, y_train), valid_pair, meta_plan)
    return meta, result


def fusion_experiment(train: FusionSet, valid: Optional[FusionSet], test: FusionSet, plan: TrainPlan,
                      config: Optional[MetaModelConfig] = None, fpr_grid: Sequence[float] = DEFAULT_FPR_GRID,
                      subsets: Optional[Sequence[Sequence[str]]] = None) -> ExperimentResult:
    """
    Train a meta-model per module subset and tabulate test detection rates

    Returns:
        ExperimentResult; grid rows follow the subset order, absent subsets are blank
    """
    config = config or MetaModelConfig()
    subsets = [canonical_subset(s) for s in (subsets or all_subsets())]
    logger.info(f"🚀 Fusion experiment over {len(subsets)} subsets")

    metas: Dict[str, Optional[MetaModel]] = {}
    histories: Dict[str, pd.DataFrame] = {}
    for subset in subsets:
        label = subset_label(subset)
        meta, result = train_subset_meta(subset, train, valid, config, plan)
        metas[label] = meta
        if meta is not None:
            histories[label] = result.history

    grid = score_grid(metas, test, fpr_grid, subsets)
    return ExperimentResult(grid=grid, metas=metas, histories=histories)


def score_grid(metas: Mapping[str, Optional[MetaModel]], test: FusionSet,
               fpr_grid: Sequence[float] = DEFAULT_FPR_GRID,
               subsets: Optional[Sequence[Sequence[str]]] = None) -> pd.DataFrame:
    """
    Detection-rate grid of trained meta-models

    Every subset is scored on the same test rows (those with all modalities
    available) so grid rows are comparable. Subsets without a meta-model are
    blank rows.
    """
    subsets = [canonical_subset(s) for s in (subsets or all_subsets())]
    present = [m for m in MODULE_ORDER if test.available[m].any()]
    common_rows = test.rows_with(present)
    scored: Dict[str, Optional[tuple]] = {}
    for subset in subsets:
        label = subset_label(subset)
        meta = metas.get(label)
        if meta is None:
            scored[label] = None
            continue
        x_test, y_test = test.select(subset, rows=common_rows)
        if not _both_classes(y_test):
            logger.warning(f"⚠️  Test rows for {label} lack a class, grid row left blank")
            scored[label] = None
            continue
        scored[label] = (meta.predict(x_test), y_test)

    grid = detection_rate_grid(scored, fpr_grid, row_order=[subset_label(s) for s in subsets])
    logger.info(f"📊 Detection-rate grid over {common_rows.size} test rows:\n{grid.to_string(index=False)}")
    return grid


def meta_model_comparison(train: FusionSet, valid: FusionSet, plan: TrainPlan,
                          configs: Optional[List[MetaModelConfig]] = None,
                          subset: Sequence[str] = MODULE_ORDER) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Validation metrics of LR and FFNN meta-models of several depths on one subset

    Returns:
        (comparison table, wall-time table); wall times vary between runs
    """
    configs = configs or comparison_configs()
    rows, timings = [], []
    for config in configs:
        meta, result = train_subset_meta(subset, train, valid, config, plan)
        if meta is None:
            continue
        x_valid, y_valid = valid.select(subset)
        report = evaluate_scores(meta.predict(x_valid), y_valid, plan.decision_threshold)
        rows.append({
            'model': config.label,
            'kind': config.kind,
            'hidden': '-'.join(str(w) for w in config.hidden),
            'parameters': meta.network.num_parameters(),
            'epochs': result.epochs_run,
            'auc': report.auc,
            'f1': report.f1,
            'precision': report.precision,
            'recall': report.recall,
            'accuracy': report.accuracy,
        })
        timings.append({'model': config.label, 'wall_time_s': result.wall_time})
    comparison = pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
    logger.info(f"📊 Meta-model comparison:\n{comparison.to_string(index=False)}")
    return comparison, pd.DataFrame(timings, columns=['model', 'wall_time_s'])
