"""Evaluation metrics: accuracy, AUC, macro-F1 and the concordance index."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import UndefinedMetricError


def accuracy(pred_labels, labels) -> float:
    pred_labels, labels = np.asarray(pred_labels), np.asarray(labels)
    if len(labels) == 0:
        raise UndefinedMetricError("empty evaluation set")
    return float((pred_labels == labels).mean())


def binary_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc(probs, labels) -> float:
    """Binary AUC on P(class 1), or macro one-vs-rest AUC over classes that occur."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim == 1:
        return binary_auc(probs, labels)
    if probs.shape[1] == 2:
        return binary_auc(probs[:, 1], labels)
    present = np.unique(labels)
    if len(present) < 2:
        raise UndefinedMetricError("AUC needs at least two classes present")
    return float(np.mean([binary_auc(probs[:, c], labels == c) for c in present]))


def macro_f1(pred_labels, labels, num_classes: int | None = None) -> float:
    pred_labels, labels = np.asarray(pred_labels), np.asarray(labels)
    classes = range(num_classes) if num_classes else np.union1d(labels, pred_labels)
    scores = []
    for c in classes:
        tp = np.sum((pred_labels == c) & (labels == c))
        fp = np.sum((pred_labels == c) & (labels != c))
        fn = np.sum((pred_labels != c) & (labels == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def c_index(risks, times, events) -> float:
    """Harrell's concordance over pairs (i, j) with event_i and t_i < t_j."""
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events).astype(bool)
    comparable = events[:, None] & (times[:, None] < times[None, :])
    n = comparable.sum()
    if n == 0:
        raise UndefinedMetricError("no comparable pairs")
    diff = risks[:, None] - risks[None, :]
    score = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float((score * comparable).sum() / n)


def softmax_rows(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classification_metrics(logits, labels) -> dict[str, float]:
    probs = softmax_rows(logits)
    pred = probs.argmax(axis=1)
    return {
        "accuracy": accuracy(pred, labels),
        "auc": auc(probs, labels),
        "macro_f1": macro_f1(pred, labels, probs.shape[1]),
    }


def survival_metrics(risks, times, events) -> dict[str, float]:
    return {"c_index": c_index(np.ravel(risks), times, events)}


def metrics(preds, labels) -> dict[str, float]:
    """Classification metrics for ``[n, C]`` logits and int labels, or the
    concordance index when ``labels`` is a ``(times, events)`` pair."""
    if isinstance(labels, tuple) and len(labels) == 2:
        return survival_metrics(preds, *labels)
    return classification_metrics(preds, labels)
