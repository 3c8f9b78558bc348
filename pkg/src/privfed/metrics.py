"""Discrimination metrics: AUC, sensitivity, specificity, and fold summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass(frozen=True)
class MetricSet:
    auc: float
    sensitivity: float
    specificity: float
    n_pos: int
    n_neg: int
    threshold: float


def _check_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size != labels.size:
        raise MetricError("scores and labels differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != labels.size:
        raise MetricError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("need at least one positive and one negative")
    return scores, labels, n_pos, n_neg


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks, so ties contribute 1/2.

    Equivalent to the pairwise statistic P(s_pos > s_neg) + 0.5 * P(equal).
    """
    scores, labels, n_pos, n_neg = _check_labels(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[np.asarray(labels) == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_bruteforce(scores, labels) -> float:
    """O(n^2) pairwise oracle; kept independent of the rank path."""
    scores, labels, n_pos, n_neg = _check_labels(scores, labels)
    pos = scores[np.asarray(labels) == 1]
    neg = scores[np.asarray(labels) == 0]
    wins = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    return float((wins + 0.5 * ties) / (n_pos * n_neg))


def sensitivity_specificity(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """TPR and TNR with "predicted positive" meaning score >= threshold."""
    scores, labels, n_pos, n_neg = _check_labels(scores, labels)
    predicted = scores >= threshold
    labels = np.asarray(labels)
    tp = int(np.sum(predicted & (labels == 1)))
    tn = int(np.sum(~predicted & (labels == 0)))
    return tp / n_pos, tn / n_neg


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricSet:
    scores, labels, n_pos, n_neg = _check_labels(scores, labels)
    a = auc(scores, labels)
    sens, spec = sensitivity_specificity(scores, labels, threshold)
    return MetricSet(a, sens, spec, n_pos, n_neg, threshold)


def summarize(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0.0 for a single value)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise MetricError("nothing to summarize")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def summarize_metric_sets(sets) -> dict:
    sets = list(sets)
    out = {}
    for field in ("auc", "sensitivity", "specificity"):
        mean, std = summarize(getattr(m, field) for m in sets)
        out[f"{field}_mean"] = mean
        out[f"{field}_std"] = std
    return out
