"""Rank and product-moment correlation, plus segmentation overlap scores."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConstantInputError, LabelError, MetricError, ZeroVarianceError
from .rubric import N_CLASSES


def _paired(predictions, truths) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(predictions, dtype=float).reshape(-1)
    y = np.asarray(truths, dtype=float).reshape(-1)
    if x.size != y.size:
        raise MetricError(f"paired sample lengths differ: {x.size} vs {y.size}")
    if x.size < 3:
        raise MetricError(f"correlation needs at least 3 pairs, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise MetricError("paired sample contains non-finite values")
    return x, y


def rank_average(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they occupy."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise MetricError("cannot rank an empty sample")
    order = np.argsort(v, kind="stable")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        # positions i..j (0-based) -> ranks i+1..j+1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _centered_corr(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    r = float((dx @ dy) / np.sqrt((dx @ dx) * (dy @ dy)))
    return min(1.0, max(-1.0, r))


def pearson(predictions, truths) -> float:
    """Two-pass, mean-centred product-moment correlation."""
    x, y = _paired(predictions, truths)
    for name, v in (("predictions", x), ("truths", y)):
        if np.all(v == v[0]):
            raise ZeroVarianceError(f"{name} have zero variance")
    return _centered_corr(x, y)


def spearman(predictions, truths) -> float:
    """Pearson correlation of average ranks."""
    x, y = _paired(predictions, truths)
    for name, v in (("predictions", x), ("truths", y)):
        if np.all(v == v[0]):
            raise ConstantInputError(f"{name} are constant; rank correlation is undefined")
    return _centered_corr(rank_average(x), rank_average(y))


def _labels_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(getattr(pred, "labels", pred), dtype=np.int64).reshape(-1)
    t = np.asarray(getattr(truth, "labels", truth), dtype=np.int64).reshape(-1)
    if p.size != t.size:
        raise LabelError(f"labelings differ in length: {p.size} vs {t.size}")
    return p, t


def dice(pred, truth) -> float:
    """``2 (a . b) / (|a|^2 + |b|^2)`` on flattened one-hot window labels.

    For one-hot rows this reduces to the fraction of windows whose labels
    agree.  Two empty labelings score 1.
    """
    p, t = _labels_pair(pred, truth)
    if p.size == 0:
        return 1.0
    return 2.0 * float(np.count_nonzero(p == t)) / (2.0 * p.size)


def iou(pred, truth) -> float:
    """Per-class window IoU averaged over classes present in either labeling."""
    p, t = _labels_pair(pred, truth)
    if p.size == 0:
        return 1.0
    scores = []
    for c in range(N_CLASSES):
        union = np.count_nonzero((p == c) | (t == c))
        if union == 0:
            continue
        scores.append(np.count_nonzero((p == c) & (t == c)) / union)
    return float(np.mean(scores))


def tertile_groups(values: Sequence[float]) -> list[np.ndarray]:
    """Indices split into Low/Med/High thirds by value (sizes differ by at most 1)."""
    order = np.argsort(np.asarray(values, dtype=float), kind="stable")
    return [np.sort(g) for g in np.array_split(order, 3)]
