"""Evaluation metrics for regression, classification, and pairwise ranking."""

from __future__ import annotations

import numpy as np

from .core import PROB_EPS


def _paired(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(predictions, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.float64)
    if pred.shape != lab.shape:
        raise ValueError(
            f"length mismatch: {pred.shape[0]} predictions, {lab.shape[0]} labels")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, lab


def eval_rmse(predictions, labels) -> float:
    pred, lab = _paired(predictions, labels)
    return float(np.sqrt(np.mean((lab - pred) ** 2)))


def eval_logloss(predictions, labels) -> float:
    """Mean negative log-likelihood with the scoring module's clamping."""
    pred, lab = _paired(predictions, labels)
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(lab * np.log(p) + (1.0 - lab) * np.log(1.0 - p)))


def eval_pairacc(predictions) -> float:
    """Fraction of pairwise predictions strictly above 0.5; ties lose."""
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.mean(pred > 0.5))
