"""
Regression metrics: coefficient of determination and Spearman correlation.

Both are computed per tissue over the evaluation transcripts, in float64,
and macro-averaged over the tissues where they are defined.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import DegenerateTargets, ShapeMismatch
from .models.report_models import MetricsReport, TissueMetrics

logger = logging.getLogger(__name__)


def _pair(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if preds.shape != targets.shape:
        raise ShapeMismatch(f"{preds.size} predictions for {targets.size} targets")
    if preds.size < 2:
        raise DegenerateTargets(f"Need at least 2 samples, got {preds.size}")
    return preds, targets


def r2(preds, targets) -> float:
    """
    1 - SS_res / SS_tot.

    Raises:
        DegenerateTargets: For fewer than 2 samples or constant targets
    """
    preds, targets = _pair(preds, targets)
    centred = targets - targets.mean()
    ss_tot = float(np.dot(centred, centred))
    if ss_tot == 0.0:
        raise DegenerateTargets("Targets are constant")
    residual = targets - preds
    return 1.0 - float(np.dot(residual, residual)) / ss_tot


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = x - x.mean()
    y = y - y.mean()
    denominator = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if denominator == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / denominator, -1.0, 1.0))


def spearman(preds, targets) -> float:
    """
    Pearson correlation of average ranks; ties share the mean of their ranks.

    Constant predictions carry no ranking and score 0.

    Raises:
        DegenerateTargets: For fewer than 2 samples or constant targets
    """
    preds, targets = _pair(preds, targets)
    if np.all(targets == targets[0]):
        raise DegenerateTargets("Targets are constant")
    return _pearson(rankdata(preds, method="average"), rankdata(targets, method="average"))


def _defined(metric, preds: np.ndarray, targets: np.ndarray) -> Optional[float]:
    try:
        return metric(preds, targets)
    except DegenerateTargets:
        return None


def macro_average(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def metrics_report(predictions: np.ndarray,
                   targets: np.ndarray,
                   tissues: Sequence[str]) -> MetricsReport:
    """
    Per-tissue R² and Spearman with macro averages.

    Args:
        predictions: (N, T) predictions
        targets: (N, T) targets on the same scale
        tissues: T tissue names

    Returns:
        MetricsReport: Undefined tissues (constant targets) are None and
            excluded from the averages

    Raises:
        ShapeMismatch: If the shapes disagree with each other or the tissues
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 2 or predictions.shape[1] != len(tissues):
        raise ShapeMismatch(
            f"predictions {predictions.shape}, targets {targets.shape}, {len(tissues)} tissues"
        )
    per_tissue = []
    for column, tissue in enumerate(tissues):
        per_tissue.append(TissueMetrics(
            tissue=tissue,
            r2=_defined(r2, predictions[:, column], targets[:, column]),
            spearman=_defined(spearman, predictions[:, column], targets[:, column]),
        ))
    undefined = [m.tissue for m in per_tissue if m.r2 is None]
    if undefined:
        logger.warning("Metrics undefined for %d tissues: %s", len(undefined), ", ".join(undefined[:5]))
    return MetricsReport(
        tissues=per_tissue,
        r2=macro_average([m.r2 for m in per_tissue]),
        spearman=macro_average([m.spearman for m in per_tissue]),
        num_samples=int(predictions.shape[0]),
    )
