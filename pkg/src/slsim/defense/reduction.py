"""Dimensionality reduction of embedding batches.

``umap_reduce`` is a compact neighbor-graph layout in the style of UMAP:
exact kNN graph, per-point bandwidth calibration, fuzzy-union symmetrization
and a negative-sampling layout. Fixed curve constants and a PCA start make it
deterministic for a given seed; it does not try to match any reference
implementation number for number.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from slsim.errors import ConfigError, ShapeError
from slsim.split import RAW_E, REDUCED_U, EmbeddingBatch

log = logging.getLogger(__name__)

CURVE_A = 1.577
CURVE_B = 0.895
NEGATIVE_SAMPLES = 5
_BANDWIDTH_ITERS = 64
_MIN_DIST_SCALE = 1e-3
_INIT_SPREAD = 10.0
_GRAD_CLIP = 4.0

REDUCERS = ("neighbor_graph", "pca")


@dataclass(frozen=True)
class TransformConfig:
    reduced_dim: int = 2
    reducer: str = "neighbor_graph"
    n_neighbors: int = 15
    layout_epochs: int = 200
    max_degree: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.reducer not in REDUCERS:
            raise ConfigError(f"unknown reducer {self.reducer!r}")
        if self.reduced_dim < 1:
            raise ConfigError("reduced_dim must be >= 1")
        if self.n_neighbors < 2:
            raise ConfigError("n_neighbors must be >= 2")
        if self.layout_epochs < 0 or self.max_degree < 1:
            raise ConfigError("layout_epochs must be >= 0 and max_degree >= 1")


class Reduction(NamedTuple):
    batch: EmbeddingBatch
    degenerate: bool


def _check_input(E: EmbeddingBatch, d_u: int) -> None:
    if E.stage != RAW_E:
        raise ConfigError(f"reduction expects a {RAW_E} batch, got {E.stage}")
    if not 1 <= d_u < E.d:
        raise ShapeError(f"reduced dim {d_u} must lie in [1, {E.d})")


def pca_project(X: np.ndarray, d_u: int):
    """Centered projection onto the top ``d_u`` principal axes.

    Returns ``(scores, axes, rank_deficient)``; each axis has its
    largest-magnitude component made positive, and numerically null axes are
    zeroed.
    """
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    axes = np.zeros((d_u, X.shape[1]))
    k = min(d_u, vt.shape[0])
    axes[:k] = vt[:k]
    tol = max(X.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    live = np.zeros(d_u, dtype=bool)
    live[:k] = s[:k] > tol
    axes[~live] = 0.0
    for i in np.flatnonzero(live):
        j = np.argmax(np.abs(axes[i]))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return Xc @ axes.T, axes, bool(not live.all())


def pca_reduce(E: EmbeddingBatch, d_u: int) -> Reduction:
    _check_input(E, d_u)
    if E.m < 2:
        raise ShapeError("PCA needs at least two rows")
    scores, _, deficient = pca_project(E.values, d_u)
    if deficient:
        log.warning("PCA: batch has rank < %d; trailing components zero-filled", d_u)
    return Reduction(E.advance(scores, REDUCED_U), deficient)


def knn_graph(X: np.ndarray, k: int):
    """Exact Euclidean k nearest neighbors (self excluded), nearest first."""
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    # partition first, then order the k survivors by (distance, index)
    cand = np.sort(np.argpartition(d2, k - 1, axis=1)[:, :k], axis=1)
    cut = np.take_along_axis(d2, cand, axis=1).max(axis=1)
    if np.any(np.sum(d2 <= cut[:, None], axis=1) > k):
        # ties straddle the cut: fall back to a full stable sort
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    else:
        order = np.argsort(np.take_along_axis(d2, cand, axis=1), axis=1, kind="stable")
        idx = np.take_along_axis(cand, order, axis=1)
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    return idx, dist


def calibrate_bandwidths(knn_dist: np.ndarray):
    """Per-point offset ``rho`` (nearest distance) and scale ``sigma`` with
    ``sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = log2(k)``."""
    m, k = knn_dist.shape
    target = np.log2(k)
    rho = knn_dist[:, 0].copy()
    excess = np.maximum(knn_dist - rho[:, None], 0.0)
    lo = np.zeros(m)
    hi = np.full(m, np.inf)
    mid = np.ones(m)
    for _ in range(_BANDWIDTH_ITERS):
        total = np.exp(-excess / mid[:, None]).sum(axis=1)
        too_big = total > target
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
        mid = np.where(np.isinf(hi), mid * 2.0, (lo + hi) / 2.0)
    # floor keeps sigma positive when all neighbors sit at the same distance
    floor = _MIN_DIST_SCALE * np.maximum(knn_dist.mean(axis=1), knn_dist.mean())
    return rho, np.maximum(mid, floor)


def fuzzy_graph(idx: np.ndarray, dist: np.ndarray) -> sparse.csr_matrix:
    m, k = idx.shape
    rho, sigma = calibrate_bandwidths(dist)
    w = np.exp(-np.maximum(dist - rho[:, None], 0.0) / sigma[:, None])
    P = sparse.csr_matrix((w.ravel(), (np.repeat(np.arange(m), k), idx.ravel())), shape=(m, m))
    Pt = P.T.tocsr()
    G = P + Pt - P.multiply(Pt)
    G.eliminate_zeros()
    return G.tocsr()


def _scaled_init(X: np.ndarray, d_u: int) -> np.ndarray:
    scores, _, _ = pca_project(X, d_u)
    span = np.abs(scores).max()
    return scores * (_INIT_SPREAD / span) if span > 0 else scores


def _accumulate(out: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """``out[rows] += values`` with repeated rows summed (unbuffered add)."""
    for c in range(out.shape[1]):
        out[:, c] += np.bincount(rows, weights=values[:, c], minlength=out.shape[0])


def optimize_layout(Y: np.ndarray, G: sparse.csr_matrix, n_epochs: int, rng: np.random.Generator) -> np.ndarray:
    """Attraction along graph edges, repulsion from random points.

    All updates of one epoch are computed from the same snapshot and applied
    together, so the result does not depend on edge visiting order.
    """
    Y = Y.copy()
    if n_epochs == 0 or G.nnz == 0:
        return Y
    coo = G.tocoo()
    keep = coo.data >= coo.data.max() / n_epochs
    head, tail, w = coo.row[keep], coo.col[keep], coo.data[keep]
    period = w.max() / w
    next_due = period.copy()
    m = Y.shape[0]
    a, b = CURVE_A, CURVE_B
    for epoch in range(1, n_epochs + 1):
        alpha = 1.0 - (epoch - 1) / n_epochs
        due = np.flatnonzero(next_due <= epoch)
        if due.size == 0:
            continue
        next_due[due] += period[due]
        i, j = head[due], tail[due]
        move = np.zeros_like(Y)

        diff = Y[i] - Y[j]
        d2 = np.einsum("ij,ij->i", diff, diff)
        coef = np.zeros_like(d2)
        pos = d2 > 0
        coef[pos] = -2.0 * a * b * d2[pos] ** (b - 1.0) / (1.0 + a * d2[pos] ** b)
        step = np.clip(coef[:, None] * diff, -_GRAD_CLIP, _GRAD_CLIP) * alpha
        _accumulate(move, i, step)
        _accumulate(move, j, -step)

        neg_i = np.repeat(i, NEGATIVE_SAMPLES)
        neg_k = rng.integers(0, m, size=neg_i.size)
        distinct = neg_k != neg_i
        neg_i, neg_k = neg_i[distinct], neg_k[distinct]
        diff = Y[neg_i] - Y[neg_k]
        d2 = np.einsum("ij,ij->i", diff, diff)
        coef = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2 ** b))
        step = np.where(d2[:, None] > 0, np.clip(coef[:, None] * diff, -_GRAD_CLIP, _GRAD_CLIP), _GRAD_CLIP)
        _accumulate(move, neg_i, step * alpha)

        Y += move
    return Y


def umap_reduce(E: EmbeddingBatch, cfg: TransformConfig) -> Reduction:
    """Neighbor-graph layout of ``E`` in ``cfg.reduced_dim`` dims.

    Falls back to the PCA projection (``degenerate=True``) when the batch has
    no more rows than ``cfg.n_neighbors``.
    """
    _check_input(E, cfg.reduced_dim)
    if E.m <= cfg.n_neighbors:
        log.warning("batch of %d rows too small for %d neighbors; using PCA", E.m, cfg.n_neighbors)
        scores, _, _ = pca_project(E.values, cfg.reduced_dim)
        return Reduction(E.advance(scores, REDUCED_U), True)
    idx, dist = knn_graph(E.values, cfg.n_neighbors)
    G = fuzzy_graph(idx, dist)
    Y0 = _scaled_init(E.values, cfg.reduced_dim)
    Y = optimize_layout(Y0, G, cfg.layout_epochs, np.random.default_rng(cfg.seed))
    return Reduction(E.advance(Y, REDUCED_U), False)


def reduce(E: EmbeddingBatch, cfg: TransformConfig) -> Reduction:
    if cfg.reducer == "pca":
        return pca_reduce(E, cfg.reduced_dim)
    return umap_reduce(E, cfg)
