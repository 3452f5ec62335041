"""Precision-recall curves and average precision.

AP is the exact area under the monotone precision envelope of the PR curve
(precision at recall r replaced by the maximum precision at any recall >= r).
Score ties are broken by stable input order, which makes AP well defined on
tied inputs; AP is invariant under strictly increasing score transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float


@dataclass(frozen=True)
class APResult:
    ap: float
    class_id: int = 0


def pr_curve(scores, labels, total_positives: int) -> list:
    """One PR point per prediction, sorted by descending score (stable ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if total_positives < 1:
        raise ValueError("AP undefined without positives (total_positives < 1)")
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(labels[order] != 0)
    fp = np.cumsum(labels[order] == 0)
    recall = tp / total_positives
    precision = tp / (tp + fp)
    return [PRPoint(float(r), float(p)) for r, p in zip(recall, precision)]


def average_precision(points, class_id: int = 0) -> APResult:
    """Area under the monotone envelope of the curve."""
    if not points:
        raise ValueError("empty PR curve")
    recall = np.array([p.recall for p in points])
    precision = np.array([p.precision for p in points])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum((recall - prev_r) * envelope))
    return APResult(ap=ap, class_id=class_id)


def mean_ap(results) -> float:
    if not results:
        raise ValueError("mean over an empty AP list")
    return float(np.mean([r.ap for r in results]))


def ap_from_scores(scores, labels, total_positives=None) -> float:
    labels = np.asarray(labels)
    if total_positives is None:
        total_positives = int(np.sum(labels != 0))
    return average_precision(pr_curve(scores, labels, total_positives)).ap
