"""Adaptive majority-based filtering and its ablation variants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from slsim.baselines import kmeans_filter
from slsim.defense.expansion import pkt_expand
from slsim.defense.reduction import TransformConfig, reduce
from slsim.errors import ConfigError, ShapeError
from slsim.split import EmbeddingBatch

DEFAULT_ALPHA = 1.5

# variant -> (stage filtered on, radius rule)
VARIANTS = {
    "full": ("H", "adaptive"),
    "I": ("E", "majority"),
    "II": ("E", "adaptive"),
    "III": ("U", "majority"),
    "IV": ("U", "adaptive"),
    "V": ("H", "majority"),
    "VI": ("H", "kmeans"),
}


@dataclass(frozen=True)
class FilterDiagnostics:
    median: Optional[np.ndarray]
    radius: float
    variance: float
    adaptive_radius: float
    retained: np.ndarray
    distances: Optional[np.ndarray] = None
    variant: str = "full"
    degenerate: bool = False


def coordinate_median(H) -> np.ndarray:
    values = H.values if isinstance(H, EmbeddingBatch) else np.asarray(H, dtype=np.float64)
    if values.shape[0] < 1:
        raise ShapeError("median of an empty batch")
    return np.median(values, axis=0)


def distances_to(values: np.ndarray, center: np.ndarray) -> np.ndarray:
    if center.shape != (values.shape[1],):
        raise ShapeError(f"center dim {center.shape} != embedding dim {values.shape[1]}")
    return np.linalg.norm(values - center, axis=1)


def majority_radius(H, center) -> float:
    """Smallest radius around ``center`` whose closed ball holds at least half
    the rows: the ceil(m/2)-th smallest distance."""
    values = H.values if isinstance(H, EmbeddingBatch) else np.asarray(H, dtype=np.float64)
    dist = np.sort(distances_to(values, np.asarray(center, dtype=np.float64)))
    return float(dist[math.ceil(len(dist) / 2) - 1])


def embedding_variance(H) -> Tuple[float, bool]:
    """Mean per-coordinate population variance; ``(0.0, True)`` below two rows."""
    values = H.values if isinstance(H, EmbeddingBatch) else np.asarray(H, dtype=np.float64)
    if values.shape[0] < 2:
        return 0.0, True
    return float(values.var(axis=0).mean()), False


def adaptive_radius(radius: float, variance: float, alpha: float = DEFAULT_ALPHA) -> float:
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    return (1.0 + 1.0 / (alpha + variance)) * radius


def ball_filter(values, alpha: float = DEFAULT_ALPHA, rule: str = "adaptive", variant: str = "full",
                degenerate: bool = False):
    """Step II on an already transformed batch: keep the rows within the
    majority radius (``rule="majority"``) or the adaptive radius of the
    coordinate-wise median. Returns ``(retained, diagnostics)``."""
    values = values.values if isinstance(values, EmbeddingBatch) else np.asarray(values, dtype=np.float64)
    if rule not in ("adaptive", "majority"):
        raise ConfigError(f"unknown radius rule {rule!r}")
    center = coordinate_median(values)
    dist = distances_to(values, center)
    r = float(np.sort(dist)[math.ceil(len(dist) / 2) - 1])
    var, flat = embedding_variance(values)
    r_adp = adaptive_radius(r, var, alpha)
    limit = r_adp if rule == "adaptive" else r
    retained = np.flatnonzero(dist <= limit)
    return retained, FilterDiagnostics(center, r, var, r_adp, retained, dist, variant, degenerate or flat)


@dataclass(frozen=True)
class Transformed:
    E: EmbeddingBatch
    U: Optional[EmbeddingBatch]
    H: Optional[EmbeddingBatch]
    degenerate: bool


def transform(E: EmbeddingBatch, cfg: TransformConfig, need_h: bool = True) -> Transformed:
    U, degenerate = reduce(E, cfg)
    H = pkt_expand(U, E.d, cfg.max_degree) if need_h else None
    return Transformed(E, U, H, degenerate)


def filter_batch(E: EmbeddingBatch, cfg: TransformConfig, alpha: float = DEFAULT_ALPHA,
                 variant: str = "full", transformed: Optional[Transformed] = None):
    """Return ``(retained, diagnostics)`` for one round's embeddings.

    ``transformed`` can carry a precomputed reduction/expansion of ``E``.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if E.m < 2:
        raise ShapeError("filtering needs at least two embeddings")
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    stage, rule = VARIANTS[variant]
    degenerate = False
    if stage == "E":
        values = E.values
    else:
        if transformed is None:
            transformed = transform(E, cfg, need_h=stage == "H")
        degenerate = transformed.degenerate
        values = transformed.U.values if stage == "U" else transformed.H.values
    if rule == "kmeans":
        retained = kmeans_filter(values, seed=cfg.seed)
        diag = FilterDiagnostics(None, math.nan, math.nan, math.nan, retained, None, variant, degenerate)
        return retained, diag
    return ball_filter(values, alpha, rule, variant, degenerate)
