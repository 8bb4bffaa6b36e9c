"""Small fully connected networks with hand-written backpropagation.

Everything here is a pure function over :class:`MlpParams`; arrays are
float64 and never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from slsim.errors import ConfigError, LabelError, ShapeError

RELU = "relu"
IDENTITY = "identity"


@dataclass(frozen=True)
class MlpParams:
    """Weights ``W[l]`` have shape ``(dims[l+1], dims[l])``; rows are output units."""

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        n_layers = len(self.layer_dims) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n_layers):
            raise ShapeError("layer count mismatch between dims, weights, biases and activations")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]):
                raise ShapeError(f"layer {l}: weight shape {w.shape}")
            if b.shape != (self.layer_dims[l + 1],):
                raise ShapeError(f"layer {l}: bias shape {b.shape}")
        if self.activations and self.activations[-1] != IDENTITY:
            raise ConfigError("final layer must use the identity activation")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def with_arrays(self, weights, biases) -> "MlpParams":
        return MlpParams(self.layer_dims, tuple(weights), tuple(biases), self.activations)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass(frozen=True)
class ForwardTrace:
    # activations[0] is the input; activations[l+1] = act(pre_activations[l])
    pre_activations: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.activations[0].shape[0]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def mlp_init(layer_dims: Sequence[int], seed: int, activations: Sequence[str] | None = None,
             gain: float = 1.0) -> MlpParams:
    """Uniform(-gain/sqrt(fan_in), gain/sqrt(fan_in)) weights, zero biases.

    Hidden layers default to relu and the last layer to identity. ``gain=sqrt(6)``
    gives the He-uniform scale, which keeps deep relu stacks trainable with
    plain SGD.
    """
    if gain <= 0:
        raise ConfigError("init gain must be positive")
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ConfigError(f"layer_dims must have >= 2 positive entries, got {list(layer_dims)}")
    if activations is None:
        activations = [RELU] * (len(dims) - 2) + [IDENTITY]
    activations = tuple(activations)
    if len(activations) != len(dims) - 1 or any(a not in (RELU, IDENTITY) for a in activations):
        raise ConfigError(f"bad activation list {activations}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = gain / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(dims, tuple(weights), tuple(biases), activations)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
    return x


def forward(params: MlpParams, x) -> ForwardTrace:
    x = _as_batch(x)
    if x.shape[1] != params.in_dim:
        raise ShapeError(f"input width {x.shape[1]} != model input dim {params.in_dim}")
    pre, acts = [], [x]
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        # einsum keeps one summation order per row, so a batch forward equals
        # stacked single-row forwards bit for bit (BLAS gemm vs gemv does not)
        z = np.einsum("ij,kj->ik", h, w) + b
        h = np.maximum(z, 0.0) if act == RELU else z
        pre.append(z)
        acts.append(h)
    return ForwardTrace(pre, acts)


def predict(params: MlpParams, x) -> np.ndarray:
    return forward(params, x).output


def backward(params: MlpParams, trace: ForwardTrace, output_grad) -> Tuple[MlpParams, np.ndarray]:
    """Gradients of a scalar loss whose gradient w.r.t. the network output is
    ``output_grad``. Returns ``(param_grads, input_grad)``; ``param_grads`` is
    an :class:`MlpParams` holding gradients in place of values."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {trace.output.shape}")
    if len(trace.pre_activations) != params.n_layers:
        raise ShapeError("trace does not belong to these parameters")
    w_grads: List[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    b_grads: List[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    for l in range(params.n_layers - 1, -1, -1):
        if params.activations[l] == RELU:
            g = g * (trace.pre_activations[l] > 0.0)
        w_grads[l] = g.T @ trace.activations[l]
        b_grads[l] = g.sum(axis=0)
        g = g @ params.weights[l]
    return params.with_arrays(w_grads, b_grads), g


def softmax_cross_entropy(logits, labels) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient ``(softmax - onehot) / b``."""
    logits = _as_batch(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    b, n_classes = logits.shape
    if b < 1 or labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for {b} logit rows")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"labels must lie in [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(b)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return loss, grad / b


def _check_like(params: MlpParams, grads: MlpParams) -> None:
    if params.layer_dims != grads.layer_dims:
        raise ShapeError(f"gradient dims {grads.layer_dims} != parameter dims {params.layer_dims}")


def sgd_step(params: MlpParams, grads: MlpParams, lr: float) -> MlpParams:
    _check_like(params, grads)
    if lr < 0:
        raise ConfigError("learning rate must be non-negative")
    return params.with_arrays(
        [w - lr * gw for w, gw in zip(params.weights, grads.weights)],
        [b - lr * gb for b, gb in zip(params.biases, grads.biases)],
    )
