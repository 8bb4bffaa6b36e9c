"""Comparison defenses: trimmed mean, Multi-Krum, Gaussian noise, top-model
pruning and a 2-means cluster filter."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from slsim import nn
from slsim.errors import ConfigError
from slsim.split import EmbeddingBatch

BASELINES = ("trmean", "multi_krum", "dp", "mp", "kmeans")


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    k_trim: Optional[int] = None
    f: Optional[int] = None
    c: Optional[int] = None
    noise_std: float = 0.1
    prune_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.method not in BASELINES:
            raise ConfigError(f"unknown baseline {self.method!r}")
        if not 0.0 <= self.prune_fraction < 1.0:
            raise ConfigError("prune_fraction must lie in [0, 1)")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def trim_count(self, m: int) -> int:
        return math.ceil(0.1 * m) if self.k_trim is None else self.k_trim

    def krum_params(self, m: int):
        f = math.ceil(m / 10) if self.f is None else self.f
        c = m - 2 * f if self.c is None else self.c
        return f, c


def _values(E):
    return E.values if isinstance(E, EmbeddingBatch) else np.asarray(E, dtype=np.float64)


def trimmed_mean_clean(E, k_trim: int):
    """Per coordinate, overwrite the ``k_trim`` largest and smallest entries
    with the mean of the remaining ones. Row count is unchanged."""
    X = _values(E)
    m = X.shape[0]
    if k_trim < 0 or m <= 2 * k_trim:
        raise ConfigError(f"need m > 2*k_trim, got m={m}, k_trim={k_trim}")
    if k_trim == 0:
        out = X.copy()
    else:
        order = np.argsort(X, axis=0, kind="stable")
        middle = np.take_along_axis(X, order[k_trim:m - k_trim], axis=0)
        mean = middle.mean(axis=0)
        out = X.copy()
        extremes = np.concatenate([order[:k_trim], order[m - k_trim:]])
        np.put_along_axis(out, extremes, np.broadcast_to(mean, extremes.shape), axis=0)
    return E.with_values(out) if isinstance(E, EmbeddingBatch) else out


def krum_scores(X: np.ndarray, f: int) -> np.ndarray:
    m = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    np.fill_diagonal(d2, np.inf)
    nearest = np.sort(d2, axis=1)[:, : m - f - 2]
    return nearest.sum(axis=1)


def multi_krum_select(E, f: int, c: int) -> np.ndarray:
    """Indices (ascending) of the ``c`` rows with the smallest sum of squared
    distances to their ``m - f - 2`` nearest other rows."""
    X = _values(E)
    m = X.shape[0]
    if f < 0 or m < f + 3 or c < 1:
        raise ConfigError(f"Multi-Krum needs m >= f + 3 and c >= 1 (m={m}, f={f}, c={c})")
    scores = krum_scores(X, f)
    chosen = np.argsort(scores, kind="stable")[: min(c, m)]
    return np.sort(chosen)


def dp_noise(E, noise_std: float, seed: int):
    if noise_std < 0:
        raise ConfigError("noise_std must be non-negative")
    X = _values(E)
    out = X + np.random.default_rng(seed).normal(0.0, noise_std, size=X.shape) if noise_std > 0 else X.copy()
    return E.with_values(out) if isinstance(E, EmbeddingBatch) else out


def prune_top_model(top: nn.MlpParams, fraction: float) -> nn.MlpParams:
    """Zero the ``floor(fraction * size)`` largest-magnitude weights of every layer."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError("prune fraction must lie in [0, 1)")
    pruned = []
    for w in top.weights:
        flat = w.ravel().copy()
        n_zero = int(math.floor(fraction * flat.size))
        if n_zero:
            flat[np.argsort(-np.abs(flat), kind="stable")[:n_zero]] = 0.0
        pruned.append(flat.reshape(w.shape))
    return top.with_arrays(pruned, [b.copy() for b in top.biases])


def kmeans_filter(H, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """2-means with farthest-point seeding; indices of the larger cluster.

    Equal sizes go to the cluster holding row 0.
    """
    X = _values(H)
    m = X.shape[0]
    if m < 2:
        raise ConfigError("k-means filtering needs at least two rows")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(m))
    second = int(np.argmax(np.linalg.norm(X - X[first], axis=1)))
    centers = X[[first, second]].copy()
    labels = np.zeros(m, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.linalg.norm(X[:, None, :] - centers[None, :, :], axis=2)
        labels = dist.argmin(axis=1)
        new = centers.copy()
        for j in range(2):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
        shift = np.linalg.norm(new - centers)
        centers = new
        if shift < tol:
            break
    sizes = np.bincount(labels, minlength=2)
    if sizes[0] == sizes[1]:
        keep = labels[0]
    else:
        keep = int(sizes.argmax())
    return np.flatnonzero(labels == keep)
