"""Binary classification metrics and stratified k-fold splitting.

roc_auc uses the Mann-Whitney formulation with tied ranks; ties count 1/2.
average_precision is the step-wise (non-interpolated) sum of precision at
each positive's rank, descending score order with ties broken by lower
original index. Both match O(n^2) definitional oracles exactly (see tests).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, UndefinedMetricError


def _check_binary(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must be binary (0/1)")
    return labels


def roc_auc(scores, labels) -> float:
    """(#concordant + 0.5 #tied) / (n_pos * n_neg) via tied ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average_precision needs at least one positive")
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = labels[order] == 1
    ranks = np.arange(1, scores.size + 1)
    precision_at_pos = np.cumsum(hits)[hits] / ranks[hits]
    return float(precision_at_pos.sum() / n_pos)


def sens_spec(scores, labels, threshold: float = 0.5):
    """(sensitivity, specificity) of score >= threshold decisions."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    preds = scores >= threshold
    pos = labels == 1
    neg = labels == 0
    if not pos.any():
        raise UndefinedMetricError("sensitivity undefined without positives")
    if not neg.any():
        raise UndefinedMetricError("specificity undefined without negatives")
    sensitivity = float(preds[pos].sum() / pos.sum())
    specificity = float((~preds[neg]).sum() / neg.sum())
    return sensitivity, specificity


def stratified_kfold(labels, k: int, seed: int) -> np.ndarray:
    """Fold id per example: per-class seeded shuffle then round-robin."""
    labels = _check_binary(labels)
    if k < 2:
        raise ConfigError(f"folds must be >= 2, got {k}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xF01D,)))
    folds = np.full(labels.size, -1, dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise ConfigError(f"class {cls} has {idx.size} members, fewer than "
                              f"{k} folds")
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = np.arange(idx.size) % k
    return folds


def stratified_split(indices, labels, val_fraction: float, seed: int):
    """Split `indices` into (train, val) preserving class ratios."""
    indices = np.asarray(indices, dtype=int)
    labels = _check_binary(labels)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x5F11,)))
    train, val = [], []
    for cls in (0, 1):
        idx = indices[labels[indices] == cls]
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(val_fraction * idx.size))
        if idx.size >= 2:
            n_val = min(max(n_val, 1), idx.size - 1)
        val.extend(idx[:n_val].tolist())
        train.extend(idx[n_val:].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(val), dtype=int)
