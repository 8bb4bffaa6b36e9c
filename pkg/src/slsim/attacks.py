"""Embedding- and feature-level backdoor injectors.

Label inference is not simulated: the attacker is handed true labels for a
fixed subset of training examples (the auxiliary-label oracle) and picks its
poison rows from those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple, Union

import numpy as np

from slsim.errors import ConfigError, ShapeError
from slsim.split import round_half_up

ADDITIVE = "additive"
REPLACEMENT = "replacement"
FEATURE_PATCH = "feature_patch"

ATTACKS = ("none", "villain", "he", "fu", "badvfl", "adaptive")
FU_BASE = np.array([1.0, -1.0, 1.0, -1.0, 1.0])


@dataclass(frozen=True)
class TriggerSpec:
    pattern: np.ndarray
    magnitude: float
    kind: str
    mask: np.ndarray
    patch_value: float = 1.0

    def __post_init__(self):
        pattern = np.asarray(self.pattern, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if pattern.ndim != 1 or mask.shape != pattern.shape:
            raise ShapeError("pattern and mask must be vectors of equal length")
        if np.any(pattern[~mask] != 0):
            raise ConfigError("pattern must be zero outside the mask")
        if self.magnitude < 0:
            raise ConfigError("trigger magnitude must be non-negative")
        if self.kind not in (ADDITIVE, REPLACEMENT, FEATURE_PATCH):
            raise ConfigError(f"unknown trigger kind {self.kind!r}")
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return self.pattern.shape[0]

    def scaled(self, magnitude: float) -> "TriggerSpec":
        return TriggerSpec(self.pattern, magnitude, self.kind, self.mask, self.patch_value)


def villain_trigger(dim: int, magnitude: float = 4.0, fraction: float = 0.5) -> TriggerSpec:
    """Alternating +1/-1 over the first ``fraction`` of the embedding dims."""
    active = max(1, int(round(fraction * dim)))
    mask = np.zeros(dim, dtype=bool)
    mask[:active] = True
    pattern = np.zeros(dim)
    pattern[:active] = np.where(np.arange(active) % 2 == 0, 1.0, -1.0)
    return TriggerSpec(pattern, magnitude, ADDITIVE, mask)


def he_trigger(dim: int, magnitude: float = 4.0, seed: int = 0) -> TriggerSpec:
    pattern = np.random.default_rng(seed).choice([-1.0, 1.0], size=dim)
    return TriggerSpec(pattern, magnitude, REPLACEMENT, np.ones(dim, dtype=bool))


def fu_pattern(dim: int) -> np.ndarray:
    return np.resize(FU_BASE, dim)


def badvfl_trigger(n_features: int, patch_idx, patch_value: float) -> TriggerSpec:
    mask = np.zeros(n_features, dtype=bool)
    mask[np.asarray(patch_idx, dtype=np.int64)] = True
    return TriggerSpec(mask.astype(np.float64), 1.0, FEATURE_PATCH, mask, float(patch_value))


def _check_dim(embedding: np.ndarray, trig: TriggerSpec) -> None:
    if embedding.shape[-1] != trig.dim:
        raise ShapeError(f"embedding dim {embedding.shape[-1]} != trigger dim {trig.dim}")


def villain_inject(embedding, trig: TriggerSpec) -> np.ndarray:
    """Add ``magnitude * pattern`` on the masked dims. Works on a vector or on rows."""
    if trig.kind != ADDITIVE:
        raise ConfigError("villain_inject needs an additive trigger")
    embedding = np.asarray(embedding, dtype=np.float64)
    _check_dim(embedding, trig)
    out = embedding.copy()
    out[..., trig.mask] += trig.magnitude * trig.pattern[trig.mask]
    return out


def fu_replace(embedding) -> np.ndarray:
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape[-1] < 1:
        raise ShapeError("embedding must have at least one dim")
    return np.broadcast_to(fu_pattern(embedding.shape[-1]), embedding.shape).copy()


def he_replace(embedding, trig: TriggerSpec) -> np.ndarray:
    if trig.kind != REPLACEMENT:
        raise ConfigError("he_replace needs a replacement trigger")
    embedding = np.asarray(embedding, dtype=np.float64)
    _check_dim(embedding, trig)
    return np.broadcast_to(trig.magnitude * trig.pattern, embedding.shape).copy()


def top_salient(saliency, patch_size: int) -> np.ndarray:
    """Indices of the ``patch_size`` largest saliency scores, ties to the lower index."""
    saliency = np.asarray(saliency, dtype=np.float64)
    order = np.argsort(-saliency, kind="stable")
    return np.sort(order[:patch_size])


def badvfl_feature_trigger(local_features, saliency, patch_size: int, rows, patch_value: float) -> np.ndarray:
    x = np.asarray(local_features, dtype=np.float64)
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.shape != (x.shape[1],):
        raise ShapeError(f"saliency length {saliency.shape} != feature width {x.shape[1]}")
    if not 0 <= patch_size <= x.shape[1]:
        raise ConfigError(f"patch_size must lie in [0, {x.shape[1]}]")
    out = x.copy()
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0 or patch_size == 0:
        return out
    cols = top_salient(saliency, patch_size)
    out[np.ix_(rows, cols)] = patch_value
    return out


def input_saliency(input_grad) -> np.ndarray:
    """Mean absolute input gradient over a batch."""
    return np.abs(np.asarray(input_grad, dtype=np.float64)).mean(axis=0)


def select_poison_targets(aux_labels: Union[Mapping[int, int], np.ndarray], eligible_class: int,
                          rate: float, m: int, seed: int) -> Tuple[np.ndarray, int]:
    """Sample ``round(rate * m)`` rows whose auxiliary label is ``eligible_class``.

    ``aux_labels`` maps row index to class, or is an array with -1 for rows
    whose label the attacker does not know. Returns ``(rows, shortfall)``.
    """
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"poison rate must lie in (0, 1], got {rate}")
    if isinstance(aux_labels, Mapping):
        eligible = np.array(sorted(k for k, v in aux_labels.items() if v == eligible_class and 0 <= k < m),
                            dtype=np.int64)
    else:
        labels = np.asarray(aux_labels)[:m]
        eligible = np.flatnonzero(labels == eligible_class)
    wanted = round_half_up(rate * m)
    rng = np.random.default_rng(seed)
    if eligible.size <= wanted:
        return eligible, wanted - eligible.size
    return np.sort(rng.choice(eligible, size=wanted, replace=False)), 0


@dataclass
class CountingOracle:
    accept: Callable[[float], bool]
    calls: int = 0
    history: list = field(default_factory=list)

    def __call__(self, lam: float) -> bool:
        self.calls += 1
        ok = bool(self.accept(lam))
        self.history.append((lam, ok))
        return ok


def max_bisection_calls(lam0: float, tol: float) -> int:
    return max(0, math.ceil(math.log2(lam0 / tol)))


def adaptive_lambda_search(accept: Callable[[float], bool], lam0: float, tol: float) -> float:
    """Largest trigger magnitude in ``[0, lam0]`` that ``accept`` lets through,
    found by bisection down to width ``tol``. Returns 0 if nothing passes."""
    if lam0 <= 0 or tol <= 0:
        raise ConfigError("initial magnitude and tolerance must be positive")
    lo, hi, best = 0.0, float(lam0), 0.0
    while hi - lo > tol:
        lam = (hi + lo) / 2.0
        if accept(lam):
            best = lo = lam
        else:
            hi = lam
    return best
