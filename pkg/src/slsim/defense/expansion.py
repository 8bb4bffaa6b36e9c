"""Explicit feature map of the polynomial kernel ``(x.y + 1)^p``."""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from slsim.errors import ShapeError
from slsim.split import EXPANDED_H, REDUCED_U, EmbeddingBatch

log = logging.getLogger(__name__)


def n_monomials(n_vars: int, degree: int) -> int:
    """Monomials of total degree 1..degree in ``n_vars`` variables."""
    return math.comb(n_vars + degree, degree) - 1


def pick_degree(n_vars: int, d: int, max_degree: int = 12) -> int:
    """Smallest degree whose monomial count reaches ``d`` (capped)."""
    for p in range(1, max_degree + 1):
        if n_monomials(n_vars, p) >= d:
            return p
    return max_degree


@lru_cache(maxsize=64)
def graded_lex_exponents(n_vars: int, degree: int) -> Tuple[Tuple[int, ...], ...]:
    """Exponent tuples of total degree 1..degree; by degree, then lex descending."""
    def of_degree(total: int, n: int) -> List[Tuple[int, ...]]:
        if n == 1:
            return [(total,)]
        out = []
        for first in range(total, -1, -1):
            out.extend((first,) + rest for rest in of_degree(total - first, n - 1))
        return out

    return tuple(e for t in range(1, degree + 1) for e in of_degree(t, n_vars))


def kernel_weight(exponents: Tuple[int, ...], degree: int) -> float:
    """sqrt of the multinomial coefficient p! / ((p - |a|)! a_1! ... a_n!)."""
    rest = degree - sum(exponents)
    denom = math.factorial(rest) * math.prod(math.factorial(a) for a in exponents)
    return math.sqrt(math.factorial(degree) / denom)


def poly_feature_map(X, degree: int, d: int | None = None) -> np.ndarray:
    """Weighted monomials of ``X`` (rows are points), constant term dropped.

    With all features kept, ``phi(x) . phi(y) + 1 == (x . y + 1) ** degree``.
    ``d`` truncates to the first ``d`` features, zero-padding if there are
    fewer.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    exps = graded_lex_exponents(X.shape[1], degree)
    total = len(exps) if d is None else d
    keep = exps[:total]
    out = np.zeros((X.shape[0], total))
    for col, e in enumerate(keep):
        term = np.full(X.shape[0], kernel_weight(e, degree))
        for var, power in enumerate(e):
            if power:
                term = term * X[:, var] ** power
        out[:, col] = term
    return out


def standardize(U: np.ndarray) -> np.ndarray:
    """Zero mean and unit variance per column; constant columns are left as is."""
    mean = U.mean(axis=0)
    std = U.std(axis=0)
    live = std > 0
    out = U.copy()
    out[:, live] = (U[:, live] - mean[live]) / std[live]
    return out


@lru_cache(maxsize=None)
def _warn_padding(p: int, d_u: int, d: int) -> None:
    # cached so a training run logs this once rather than every round
    log.warning("degree %d gives only %d features for d=%d; zero-padding", p, n_monomials(d_u, p), d)


def pkt_expand(U: EmbeddingBatch, d: int, max_degree: int = 12) -> EmbeddingBatch:
    if U.stage != REDUCED_U:
        raise ShapeError(f"expansion expects a {REDUCED_U} batch, got {U.stage}")
    if d < U.d:
        raise ShapeError(f"target dim {d} is below the reduced dim {U.d}")
    p = pick_degree(U.d, d, max_degree)
    if n_monomials(U.d, p) < d:
        _warn_padding(p, U.d, d)
    return U.advance(poly_feature_map(standardize(U.values), p, d), EXPANDED_H)
