"""Margin loss and ranking-based multi-label evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


def margin_loss(scores: Tensor, labels, m_plus: float = 0.9, m_minus: float = 0.1,
                lambda_down: float = 0.5) -> Tensor:
    """Sum over classes (and batch) of the two-sided capsule margin loss."""
    labels = T.as_tensor(labels, like=scores)
    if labels.shape != scores.shape:
        raise T.ShapeError("margin_loss", [scores.shape, labels.shape])
    pos = T.relu(m_plus - scores)
    neg = T.relu(scores - m_minus)
    per = labels * pos * pos + (1.0 - labels) * neg * neg * lambda_down
    return T.sum_(per)


def average_precision(scores, labels) -> float:
    """Mean of precision@rank over the ranks of positives (descending score,
    ties broken by sample index). NaN when there are no positives."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = labels[order]
    if not hits.any():
        return float("nan")
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.mean())


@dataclass
class EvalReport:
    ap: np.ndarray                 # per class, NaN where no positives
    mAP: float
    precision: np.ndarray          # per class at ``threshold``
    recall: np.ndarray
    threshold: float
    no_positive_classes: list = field(default_factory=list)
    epoch: int | None = None
    seconds: float | None = None
    loss: float | None = None


def mean_average_precision(scores, labels, threshold: float = 0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    if scores.shape != labels.shape or scores.shape[0] < 1:
        raise ValueError(f"score/label shape mismatch: {scores.shape} vs {labels.shape}")
    num_classes = scores.shape[1]
    ap = np.array([average_precision(scores[:, j], labels[:, j]) for j in range(num_classes)])
    missing = [j for j in range(num_classes) if np.isnan(ap[j])]
    valid = ap[~np.isnan(ap)]
    mAP = float(valid.mean()) if valid.size else float("nan")

    predicted = scores >= threshold
    tp = (predicted & (labels == 1)).sum(axis=0)
    npred = predicted.sum(axis=0)
    npos = labels.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(npred > 0, tp / np.maximum(npred, 1), 0.0)
        recall = np.where(npos > 0, tp / np.maximum(npos, 1), 0.0)
    return EvalReport(ap, mAP, precision, recall, threshold, missing)
