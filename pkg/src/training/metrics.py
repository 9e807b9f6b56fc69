"""
Evaluation metrics anchored on false-positive rate
Thresholds are calibrated on benign scores; a score >= threshold is a detection
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.stats import rankdata
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_score, recall_score

from src.utils.errors import DimensionError, InputError, UndefinedMetricError
from src.utils.helpers import ensure_dir

logger = logging.getLogger(__name__)

DEFAULT_FPR_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


def _as_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise InputError("labels must be 0 or 1")
    return scores, labels


def roc_auc(scores, labels) -> float:
    """
    Probability that a random positive outranks a random negative, ties counting one half

    Raises:
        UndefinedMetricError: only one class present
    """
    scores, labels = _as_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes (positives={n_pos}, negatives={n_neg})")
    ranks = rankdata(scores, method='average')
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _check_fpr(target_fpr: float):
    if not 0.0 < target_fpr < 1.0:
        raise InputError(f"target FPR must lie in (0, 1), got {target_fpr}")


def threshold_for_fpr(negative_scores, target_fpr: float) -> float:
    """
    Smallest threshold whose false-positive fraction on `negative_scores` is <= target_fpr

    Args:
        negative_scores: Scores of benign samples
        target_fpr: Target rate in (0, 1)

    Returns:
        Threshold t; negatives with score >= t count as false positives
    """
    _check_fpr(target_fpr)
    negatives = np.sort(np.asarray(negative_scores, dtype=np.float64).reshape(-1))[::-1]
    n = negatives.size
    if n == 0:
        raise InputError("threshold calibration needs at least one negative score")
    if n < 1.0 / target_fpr:
        logger.warning(f"⚠️  {n} negatives cannot resolve FPR {target_fpr:g} (need >= {int(np.ceil(1.0 / target_fpr))})")

    # largest k with k / n <= target
    k = int(np.floor(target_fpr * n))
    while (k + 1) / n <= target_fpr:
        k += 1
    while k > 0 and k / n > target_fpr:
        k -= 1
    return float(np.nextafter(negatives[k], np.inf))


def fpr_at_threshold(negative_scores, threshold: float) -> float:
    negatives = np.asarray(negative_scores, dtype=np.float64).reshape(-1)
    if negatives.size == 0:
        raise UndefinedMetricError("FPR needs at least one negative")
    return float(np.mean(negatives >= threshold))


def detection_rate_at_threshold(scores, labels, threshold: float) -> float:
    scores, labels = _as_pair(scores, labels)
    positives = scores[labels == 1]
    if positives.size == 0:
        raise UndefinedMetricError("detection rate needs at least one positive")
    return float(100.0 * np.mean(positives >= threshold))


def detection_rate_at_fpr(scores, labels, target_fpr: float) -> float:
    """
    Recall of positives (percent) at the threshold calibrated on the negatives of the same scores
    """
    scores, labels = _as_pair(scores, labels)
    if labels.min() == labels.max():
        raise UndefinedMetricError("detection rate at fixed FPR needs both classes")
    threshold = threshold_for_fpr(scores[labels == 0], target_fpr)
    return detection_rate_at_threshold(scores, labels, threshold)


class EvalReport(BaseModel):
    """Metrics of one scored, labeled set at a fixed threshold"""

    n_samples: int
    threshold: float
    auc: Optional[float] = None
    auc_defined: bool = True
    f1: float
    precision: float
    precision_defined: bool = True
    recall: float
    accuracy: float
    false_positive_rate: Optional[float] = None
    confusion: List[List[int]]
    confusion_normalized: List[List[float]]
    per_family_recall: Dict[str, float] = {}
    scores: List[float] = []
    labels: List[int] = []


def evaluate_scores(scores, labels, threshold: float, families: Optional[Sequence[str]] = None) -> EvalReport:
    """
    All report metrics at `threshold`

    AUC on single-class input is reported as undefined; precision with no
    predicted positives is reported as 0 with precision_defined=False.
    """
    scores, labels = _as_pair(scores, labels)
    predictions = (scores >= threshold).astype(np.int64)

    auc: Optional[float]
    try:
        auc = roc_auc(scores, labels)
        auc_defined = True
    except UndefinedMetricError:
        logger.warning("⚠️  AUC undefined: only one class present")
        auc, auc_defined = None, False

    counts = confusion_matrix(labels, predictions, labels=[0, 1])
    row_totals = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, row_totals, out=np.zeros(counts.shape, dtype=np.float64), where=row_totals > 0)

    per_family: Dict[str, float] = {}
    if families is not None:
        families = np.asarray(families, dtype=object)
        for family in sorted(set(families[labels == 1])):
            mask = (families == family) & (labels == 1)
            per_family[str(family)] = float(predictions[mask].mean())

    negatives = labels == 0
    return EvalReport(
        n_samples=int(labels.size),
        threshold=float(threshold),
        auc=auc,
        auc_defined=auc_defined,
        f1=float(f1_score(labels, predictions, zero_division=0)),
        precision=float(precision_score(labels, predictions, zero_division=0)),
        precision_defined=bool(predictions.sum() > 0),
        recall=float(recall_score(labels, predictions, zero_division=0)),
        accuracy=float(accuracy_score(labels, predictions)) if labels.size else 0.0,
        false_positive_rate=float(predictions[negatives].mean()) if negatives.any() else None,
        confusion=counts.astype(int).tolist(),
        confusion_normalized=normalized.tolist(),
        per_family_recall=per_family,
        scores=scores.tolist(),
        labels=labels.tolist(),
    )


def evaluate(model, inputs, labels, threshold: float, families: Optional[Sequence[str]] = None) -> EvalReport:
    """
    Score `inputs` with a module, meta-model or pipeline and evaluate at `threshold`

    Args:
        model: Anything with predict(inputs) returning scores or a PredictionResult
        inputs: Model input (a (batch, available) pair for pipelines)
    """
    if isinstance(inputs, tuple):
        result = model.predict(*inputs)
    else:
        result = model.predict(inputs)
    scores = getattr(result, 'scores', result)
    return evaluate_scores(scores, labels, threshold, families)


def format_report(report: EvalReport, title: str = 'Evaluation') -> str:
    def fmt(value: Optional[float], defined: bool = True) -> str:
        return 'undefined' if value is None or not defined else f"{value:.4f}"

    (tn, fp), (fn, tp) = report.confusion
    (tnr, fpr), (fnr, tpr) = report.confusion_normalized
    lines = [
        f"{title}",
        f"samples:   {report.n_samples}",
        f"threshold: {report.threshold:.6g}",
        f"AUC:       {fmt(report.auc, report.auc_defined)}",
        f"F1:        {report.f1:.4f}",
        f"precision: {report.precision:.4f}{'' if report.precision_defined else ' (no predicted positives)'}",
        f"recall:    {report.recall:.4f}",
        f"accuracy:  {report.accuracy:.4f}",
        f"FPR:       {fmt(report.false_positive_rate)}",
        "",
        "confusion (rows = true clean/malicious, cols = predicted clean/malicious)",
        f"  {tn:>8d} {fp:>8d}      {tnr:.4f} {fpr:.4f}",
        f"  {fn:>8d} {tp:>8d}      {fnr:.4f} {tpr:.4f}",
    ]
    if report.per_family_recall:
        lines += ["", "recall per family"]
        lines += [f"  {family:<16s} {value:.4f}" for family, value in report.per_family_recall.items()]
    return '\n'.join(lines) + '\n'


def write_eval_report(report: EvalReport, directory: Union[str, Path], prefix: str = 'eval') -> List[Path]:
    """
    Human-readable text plus CSV tables (metrics, confusion, per-family recall, scores)

    Returns:
        Paths written
    """
    directory = ensure_dir(directory)
    paths = [directory / f"{prefix}.txt"]
    paths[0].write_text(format_report(report, title=prefix), encoding='utf-8')

    metrics = pd.DataFrame([{
        'n_samples': report.n_samples,
        'threshold': report.threshold,
        'auc': report.auc if report.auc_defined else np.nan,
        'auc_defined': report.auc_defined,
        'f1': report.f1,
        'precision': report.precision,
        'precision_defined': report.precision_defined,
        'recall': report.recall,
        'accuracy': report.accuracy,
        'false_positive_rate': report.false_positive_rate,
    }])
    confusion = pd.DataFrame({
        'true_label': ['clean', 'malicious'],
        'pred_clean': [row[0] for row in report.confusion],
        'pred_malicious': [row[1] for row in report.confusion],
        'pred_clean_rate': [row[0] for row in report.confusion_normalized],
        'pred_malicious_rate': [row[1] for row in report.confusion_normalized],
    })
    families = pd.DataFrame(
        sorted(report.per_family_recall.items()), columns=['family', 'recall']
    )
    tables = {'metrics': metrics, 'confusion': confusion, 'family_recall': families}
    for name, frame in tables.items():
        path = directory / f"{prefix}_{name}.csv"
        frame.to_csv(path, index=False)
        paths.append(path)
    return paths


def fpr_column(fpr: float) -> str:
    return f"fpr_{fpr:.0e}"


def detection_rate_grid(scored: Dict[str, Optional[tuple]], fpr_grid: Sequence[float] = DEFAULT_FPR_GRID,
                        row_order: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Detection rate (%) per module combination and FPR level

    Args:
        scored: Combination label -> (scores, labels), or None for an absent combination
        fpr_grid: FPR levels (columns, ascending)
        row_order: Row labels in output order (keys of `scored` when None)

    Returns:
        DataFrame indexed by combination; absent combinations are NaN rows
    """
    fpr_grid = sorted(fpr_grid)
    rows = []
    for label in row_order or list(scored):
        row = {'combination': label}
        pair = scored.get(label)
        for fpr in fpr_grid:
            row[fpr_column(fpr)] = np.nan if pair is None else detection_rate_at_fpr(pair[0], pair[1], fpr)
        rows.append(row)
    return pd.DataFrame(rows, columns=['combination'] + [fpr_column(f) for f in fpr_grid])
