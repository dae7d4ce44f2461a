"""
Confusion-matrix helpers shared by threshold selection and evaluation.
"""
from typing import Dict, Optional, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

THRESHOLD_GRID = np.round(np.arange(1, 100) / 100.0, 2)


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray) -> Dict[str, int]:
    tn, fp, fn, tp = confusion_matrix(y_true, y_pred, labels=[0, 1]).ravel()
    return {"tp": int(tp), "fp": int(fp), "tn": int(tn), "fn": int(fn)}


def _counts_at(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """tp, fp, fn for every threshold (predict positive iff score >= threshold)"""
    predicted = np.asarray(scores)[None, :] >= np.asarray(thresholds)[:, None]
    positive = np.asarray(labels)[None, :] == 1
    tp = (predicted & positive).sum(axis=1)
    fp = (predicted & ~positive).sum(axis=1)
    fn = (~predicted & positive).sum(axis=1)
    return tp, fp, fn


def f1_at_thresholds(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """F1 per threshold, with 0/0 counted as 0"""
    tp, fp, fn = _counts_at(scores, labels, thresholds)
    denominator = 2 * tp + fp + fn
    return np.where(denominator > 0, 2 * tp / np.maximum(denominator, 1), 0.0)


def precision_at_thresholds(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    tp, fp, _ = _counts_at(scores, labels, thresholds)
    predicted = tp + fp
    return np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)


def threshold_candidates(scores: Optional[np.ndarray] = None) -> np.ndarray:
    """The 0.01 grid plus midpoints between consecutive distinct scores"""
    if scores is None or len(scores) < 2:
        return THRESHOLD_GRID.copy()
    distinct = np.unique(scores)
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate([THRESHOLD_GRID, midpoints]))


def best_threshold(scores: np.ndarray, labels: np.ndarray, candidates: np.ndarray) -> Tuple[float, float]:
    """(threshold, f1) maximizing F1; ties go to the smallest threshold"""
    candidates = np.sort(np.asarray(candidates, dtype=float))
    f1 = f1_at_thresholds(scores, labels, candidates)
    best = int(np.argmax(f1))
    return float(candidates[best]), float(f1[best])
