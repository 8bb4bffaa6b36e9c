"""Vertical split-learning protocol: feature partitioning, client embeddings,
server-side aggregation, top-model training and gradient return."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from slsim import nn
from slsim.errors import AlignmentError, ConfigError, ShapeError

log = logging.getLogger(__name__)

RAW_E = "raw_E"
REDUCED_U = "reduced_U"
EXPANDED_H = "expanded_H"
_STAGE_ORDER = {RAW_E: 0, REDUCED_U: 1, EXPANDED_H: 2}

AGGREGATION_MODES = ("average", "max", "min", "median", "concatenate")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class FeaturePartition:
    clients: tuple  # per-client sorted index arrays
    shared: np.ndarray
    rho: float
    budget: int
    dropped: np.ndarray

    @property
    def n_clients(self) -> int:
        return len(self.clients)


def partition_features(z: int, n: int, rho: float, seed: int) -> FeaturePartition:
    """Give each of ``n`` clients ``s = floor(z / (rho + n(1 - rho)))`` feature
    indices: ``round(rho * s)`` shared by every client, the rest private."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    if n < 1 or z < n:
        raise ConfigError(f"need n >= 1 and z >= n, got z={z}, n={n}")
    budget = int(math.floor(z / (rho + n * (1.0 - rho))))
    n_shared = round_half_up(rho * budget)
    n_private = budget - n_shared
    needed = n_shared + n * n_private
    if budget < 1 or needed > z:
        raise ConfigError(f"{z} features cannot supply {n} clients with {budget} features each")

    perm = np.random.default_rng(seed).permutation(z)
    shared = np.sort(perm[:n_shared])
    clients = []
    for i in range(n):
        start = n_shared + i * n_private
        private = perm[start:start + n_private]
        clients.append(np.sort(np.concatenate([shared, private])))
    dropped = np.sort(perm[needed:])
    if dropped.size:
        log.info("feature partition leaves %d of %d features unassigned", dropped.size, z)
    return FeaturePartition(tuple(clients), shared, float(rho), budget, dropped)


@dataclass(frozen=True)
class EmbeddingBatch:
    values: np.ndarray
    stage: str = RAW_E
    row_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"embedding batch must be a non-empty m x d matrix, got {values.shape}")
        if self.stage not in _STAGE_ORDER:
            raise ConfigError(f"unknown stage {self.stage!r}")
        ids = np.arange(values.shape[0]) if self.row_ids is None else np.asarray(self.row_ids)
        if ids.shape != (values.shape[0],) or np.unique(ids).size != ids.size:
            raise AlignmentError("row ids must be unique, one per row")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", ids)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def advance(self, values, stage: str) -> "EmbeddingBatch":
        """Same rows, next pipeline stage."""
        if _STAGE_ORDER[stage] <= _STAGE_ORDER[self.stage]:
            raise ConfigError(f"cannot move from {self.stage} to {stage}")
        return EmbeddingBatch(values, stage, self.row_ids)

    def with_values(self, values) -> "EmbeddingBatch":
        return replace(self, values=np.asarray(values, dtype=np.float64))


@dataclass
class RoundState:
    bottoms: List[nn.MlpParams]
    top: nn.MlpParams
    mode: str = "concatenate"
    round: int = 0

    def __post_init__(self):
        if self.mode not in AGGREGATION_MODES:
            raise ConfigError(f"unknown aggregation mode {self.mode!r}")
        dims = [b.out_dim for b in self.bottoms]
        if self.mode == "concatenate":
            if self.top.in_dim != sum(dims):
                raise ShapeError(f"top input {self.top.in_dim} != sum of client dims {sum(dims)}")
        else:
            if len(set(dims)) != 1 or self.top.in_dim != dims[0]:
                raise ShapeError(f"mode {self.mode} needs equal client dims matching the top input")


def client_forward(bottom: nn.MlpParams, local_features, row_ids=None):
    """Bottom-model forward; returns the embedding batch and the trace the
    client keeps for its backward pass."""
    trace = nn.forward(bottom, local_features)
    return EmbeddingBatch(trace.output, RAW_E, row_ids), trace


def aggregate(per_client: Sequence[EmbeddingBatch], mode: str) -> EmbeddingBatch:
    if not per_client:
        raise ConfigError("no client embeddings to aggregate")
    if mode not in AGGREGATION_MODES:
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    ids = per_client[0].row_ids
    for b in per_client[1:]:
        if b.m != per_client[0].m or not np.array_equal(b.row_ids, ids):
            raise AlignmentError("client batches are not row-aligned")
    if mode == "concatenate":
        return EmbeddingBatch(np.concatenate([b.values for b in per_client], axis=1), RAW_E, ids)
    if len({b.d for b in per_client}) != 1:
        raise ShapeError(f"mode {mode} needs equal client embedding dims")
    stack = np.stack([b.values for b in per_client])
    reducer = {"average": np.mean, "max": np.max, "min": np.min, "median": np.median}[mode]
    return EmbeddingBatch(reducer(stack, axis=0), RAW_E, ids)


def route_gradient(per_client_values: Sequence[np.ndarray], mode: str, agg_grad) -> List[np.ndarray]:
    """Split the gradient w.r.t. the aggregated embedding into per-client
    gradients (chain rule through the aggregation function)."""
    agg_grad = np.asarray(agg_grad, dtype=np.float64)
    n = len(per_client_values)
    if mode == "concatenate":
        bounds = np.cumsum([0] + [v.shape[1] for v in per_client_values])
        return [agg_grad[:, a:b].copy() for a, b in zip(bounds[:-1], bounds[1:])]
    if mode == "average":
        return [agg_grad / n for _ in range(n)]

    stack = np.stack(per_client_values)
    weights = np.zeros_like(stack)
    if mode in ("max", "min"):
        # argmax/argmin return the first (lowest-index) client on ties
        pick = stack.argmax(axis=0) if mode == "max" else stack.argmin(axis=0)
        np.put_along_axis(weights, pick[None], 1.0, axis=0)
    elif mode == "median":
        order = np.argsort(stack, axis=0, kind="stable")
        if n % 2 == 1:
            med = np.take_along_axis(stack, order[n // 2][None], axis=0)
            # lowest-index client whose value equals the median
            pick = (stack == med).argmax(axis=0)
            np.put_along_axis(weights, pick[None], 1.0, axis=0)
        else:
            np.put_along_axis(weights, order[n // 2 - 1][None], 0.5, axis=0)
            np.put_along_axis(weights, order[n // 2][None], 0.5, axis=0)
    else:
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    return [weights[i] * agg_grad for i in range(n)]


@dataclass(frozen=True)
class ServerStep:
    top: nn.MlpParams
    client_grads: List[np.ndarray]
    loss: float
    skipped: bool = False


def server_round(state: RoundState, per_client: Sequence[EmbeddingBatch], aggregated: EmbeddingBatch,
                 labels, retained, lr: float) -> ServerStep:
    """One SGD step of the top model on the retained rows.

    Filtered rows get zero embedding gradient. An empty retained set skips
    the round: parameters are returned unchanged with ``skipped=True``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    m = aggregated.m
    if labels.shape != (m,):
        raise ShapeError(f"{labels.shape[0]} labels for {m} embeddings")
    retained = np.unique(np.asarray(retained, dtype=np.int64))
    if retained.size and (retained.min() < 0 or retained.max() >= m):
        raise ConfigError("retained indices out of range")
    zero = [np.zeros_like(b.values) for b in per_client]
    if retained.size == 0:
        return ServerStep(state.top, zero, float("nan"), skipped=True)

    trace = nn.forward(state.top, aggregated.values[retained])
    loss, logit_grad = nn.softmax_cross_entropy(trace.output, labels[retained])
    grads, emb_grad = nn.backward(state.top, trace, logit_grad)
    full_grad = np.zeros_like(aggregated.values)
    full_grad[retained] = emb_grad
    client_grads = route_gradient([b.values for b in per_client], state.mode, full_grad)
    return ServerStep(nn.sgd_step(state.top, grads, lr), client_grads, loss)


def client_update(bottom: nn.MlpParams, trace: nn.ForwardTrace, embedding_grad, lr: float) -> nn.MlpParams:
    embedding_grad = np.asarray(embedding_grad, dtype=np.float64)
    if embedding_grad.shape != trace.output.shape:
        raise ShapeError(f"embedding gradient {embedding_grad.shape} != embedding {trace.output.shape}")
    grads, _ = nn.backward(bottom, trace, embedding_grad)
    return nn.sgd_step(bottom, grads, lr)
