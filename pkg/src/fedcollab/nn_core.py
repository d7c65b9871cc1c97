"""Dense feed-forward classifier with hand-written backpropagation.

Each worker owns one of these networks. Everything runs in float64 so that
finite-difference checks and bit-level reproducibility hold.

Weights are stored as ``(fan_in, fan_out)`` matrices, so a layer computes
``x @ W + b``. Hidden layers use ReLU; the last layer emits raw logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, ShapeError, UsageError

DEFAULT_HIDDEN_SIZES = (128,)
MNIST_FEATURES = 784
MNIST_CLASSES = 10


@dataclass(frozen=True)
class ModelParams:
    """Ordered dense layers. Also used to hold gradients of the same shape."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("model needs one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i} expects width {w.shape[0]}, previous layer emits {self.weights[i - 1].shape[1]}"
                )

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, flat: np.ndarray) -> "ModelParams":
        """Build a model of this shape from a flat vector (inverse of :meth:`flatten`)."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise ShapeError(f"expected {self.num_params} values, got {flat.shape}")
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(flat[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return ModelParams(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def same_shape(self, other: "ModelParams") -> bool:
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())
        )

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of every parameter."""
        return self.same_shape(other) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


Gradients = ModelParams


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN_SIZES

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InputError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if any(h < 1 for h in self.hidden_sizes):
            raise InputError(f"hidden sizes must be positive, got {self.hidden_sizes}")


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Activations kept by :func:`forward` for the matching :func:`backward`."""

    model: ModelParams
    activations: tuple[np.ndarray, ...]  # input of every layer
    pre_activations: tuple[np.ndarray, ...]  # x @ W + b of every layer
    logits: np.ndarray = field(repr=False)


def init_model(
    layer_sizes: Sequence[int], seed: int
) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from a generator seeded with ``seed``."""
    if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
        raise InputError(f"invalid layer sizes {tuple(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(tuple(weights), tuple(biases))


def mlp_sizes(
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN_SIZES,
    n_features: int = MNIST_FEATURES,
    n_classes: int = MNIST_CLASSES,
) -> tuple[int, ...]:
    return (n_features, *hidden_sizes, n_classes)


def forward(model: ModelParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.layer_sizes[0]:
        raise ShapeError(f"batch shape {batch.shape} does not match input width {model.layer_sizes[0]}")
    activations, pre = [], []
    x = batch
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        activations.append(x)
        z = x @ w + b
        pre.append(z)
        x = z if i == last else np.maximum(z, 0.0)
    return x, ForwardCache(model, tuple(activations), tuple(pre), x)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.intp)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64)))


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of the true class under softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ShapeError(f"logits must be a nonempty 2-D array, got shape {logits.shape}")
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    nll = -_log_softmax(logits)[np.arange(len(labels)), labels]
    # log-softmax can round to a tiny negative value when one logit dominates
    return float(max(nll.mean(), 0.0))


def backward(model: ModelParams, cache: ForwardCache, labels, scale: float = 1.0) -> Gradients:
    """Gradient of ``scale * cross_entropy_loss`` with respect to every parameter.

    ``scale`` is the derivative of an outer objective with respect to this
    model's loss, e.g. ``1/K`` when the aggregator averages ``K`` losses.
    """
    if cache.model is not model:
        raise UsageError("forward cache was produced by a different model")
    n = cache.logits.shape[0]
    labels = _check_labels(labels, n, model.num_classes)
    delta = softmax(cache.logits)
    delta[np.arange(n), labels] -= 1.0
    delta *= scale / n

    grad_w, grad_b = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = cache.activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (cache.pre_activations[i - 1] > 0)
    return ModelParams(tuple(grad_w), tuple(grad_b))


def sgd_step(model: ModelParams, grads: Gradients, learning_rate: float) -> ModelParams:
    if not model.same_shape(grads):
        raise ShapeError("gradients are not shape-congruent with the model")
    return ModelParams(
        tuple(w - learning_rate * g for w, g in zip(model.weights, grads.weights)),
        tuple(b - learning_rate * g for b, g in zip(model.biases, grads.biases)),
    )


def predict(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    logits, _ = forward(model, inputs)
    return np.argmax(logits, axis=1)


def evaluate(model: ModelParams, inputs: np.ndarray, labels) -> float:
    inputs = np.asarray(inputs)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise InputError("evaluate needs at least one input row")
    labels = _check_labels(labels, inputs.shape[0], model.num_classes)
    return float(np.mean(predict(model, inputs) == labels))
