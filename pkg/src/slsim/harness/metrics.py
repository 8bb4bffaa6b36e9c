"""Evaluation metrics: ACC, ASR, separation ratio, filter precision/recall."""

from __future__ import annotations

import math
from typing import Callable, Optional, Tuple

import numpy as np

from slsim.errors import ConfigError


def accuracy(predict: Callable[[np.ndarray], np.ndarray], X, y) -> float:
    """Fraction of rows whose argmax logit equals the label."""
    y = np.asarray(y)
    if y.size == 0:
        raise ConfigError("accuracy needs a non-empty test split")
    return float(np.mean(np.argmax(predict(X), axis=1) == y))


def attack_success_rate(predict_triggered: Callable[[np.ndarray], np.ndarray], X, y, target: int,
                        eligible: Optional[np.ndarray] = None) -> float:
    """Share of triggered inputs classified as ``target``.

    Rows already labelled ``target`` are excluded, as is anything outside
    ``eligible`` when given. Returns NaN if no row is left.
    """
    y = np.asarray(y)
    keep = y != target
    if eligible is not None:
        keep &= np.asarray(eligible, dtype=bool)
    if not keep.any():
        return math.nan
    pred = np.argmax(predict_triggered(np.asarray(X)[keep]), axis=1)
    return float(np.mean(pred == target))


def _unrank_pair(k: np.ndarray, n: int):
    """Map linear indices over the n*(n-1)/2 unordered pairs to (i, j), i < j."""
    # row i holds n-1-i pairs; start(i) = i*(2n - i - 1)/2
    i = (2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8.0 * k)) // 2
    i = i.astype(np.int64)
    start = i * (2 * n - i - 1) // 2
    # correct any floating point slip at row boundaries
    over = k < start
    i[over] -= 1
    start = i * (2 * n - i - 1) // 2
    under = k >= start + (n - 1 - i)
    i[under] += 1
    start = i * (2 * n - i - 1) // 2
    return i, i + 1 + (k - start)


def separation_ratio(values, poisoned, pairs: int = 100, seed: int = 0) -> Tuple[float, bool]:
    """Mean benign-poisoned distance over mean benign-benign distance.

    Pairs are drawn without replacement. Returns ``(ratio, shortfall)``;
    ``shortfall`` is set when fewer than ``pairs`` pairs exist of some kind,
    in which case all available pairs are used.
    """
    X = np.asarray(values, dtype=np.float64)
    mask = np.zeros(X.shape[0], dtype=bool)
    mask[np.asarray(poisoned, dtype=np.int64)] = True
    ben, poi = np.flatnonzero(~mask), np.flatnonzero(mask)
    if ben.size < 2 or poi.size < 1:
        raise ConfigError("separation ratio needs >= 2 benign and >= 1 poisoned rows")
    rng = np.random.default_rng(seed)

    n_bb = ben.size * (ben.size - 1) // 2
    n_bp = ben.size * poi.size
    shortfall = n_bb < pairs or n_bp < pairs
    k_bb = rng.choice(n_bb, size=min(pairs, n_bb), replace=False)
    k_bp = rng.choice(n_bp, size=min(pairs, n_bp), replace=False)
    i, j = _unrank_pair(k_bb, ben.size)
    d_ben = np.linalg.norm(X[ben[i]] - X[ben[j]], axis=1).mean()
    d_poi = np.linalg.norm(X[ben[k_bp // poi.size]] - X[poi[k_bp % poi.size]], axis=1).mean()
    return float(d_poi / d_ben) if d_ben > 0 else math.inf, shortfall


def detection_metrics(retained, poisoned, m: int) -> Tuple[float, float]:
    """``(precision, recall)`` of poison removal; NaN where undefined
    (nothing removed, or no poison present)."""
    kept = np.zeros(m, dtype=bool)
    retained = np.asarray(retained, dtype=np.int64)
    if retained.size and (retained.min() < 0 or retained.max() >= m):
        raise ConfigError("retained indices out of range")
    kept[retained] = True
    bad = np.zeros(m, dtype=bool)
    bad[np.asarray(poisoned, dtype=np.int64)] = True
    removed = ~kept
    caught = int(np.sum(removed & bad))
    precision = caught / removed.sum() if removed.any() else math.nan
    recall = caught / bad.sum() if bad.any() else math.nan
    return precision, recall
