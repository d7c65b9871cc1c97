"""Noisy plurality voting over trained worker models (PATE-style labelling).

Each query spends ``2 * gamma`` of privacy budget when every vote count is
perturbed with Laplace noise of scale ``1 / gamma``. ``gamma = math.inf``
switches the noise off; labels are then the plain plurality vote and carry
no privacy guarantee.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, ShapeError
from .nn_core import ModelParams, predict

NO_NOISE = math.inf
# |Lap(b)| > 50 b has probability exp(-50) ~ 2e-22
LAPLACE_CLAMP = 50.0


@dataclass(frozen=True)
class VoteHistogram:
    counts: np.ndarray

    @property
    def n_teachers(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class PrivacyLedger:
    gamma: float
    queries: int = 0
    delta: float = 0.0

    @property
    def accounted(self) -> bool:
        return math.isfinite(self.gamma)

    @property
    def epsilon_total(self) -> float:
        if not self.queries:
            return 0.0
        return 2.0 * self.gamma * self.queries if self.accounted else math.inf

    def spend(self, n: int = 1) -> "PrivacyLedger":
        return PrivacyLedger(self.gamma, self.queries + n, self.delta)


@dataclass(frozen=True)
class LabeledExample:
    input: np.ndarray
    label: int
    query_index: int


def _check_teachers(teachers: Sequence[ModelParams]) -> None:
    if not teachers:
        raise InputError("need at least one teacher")
    first = teachers[0]
    for t in teachers[1:]:
        if t.layer_sizes[0] != first.layer_sizes[0] or t.num_classes != first.num_classes:
            raise ShapeError("teachers disagree on input width or class count")


def teacher_predictions(teachers: Sequence[ModelParams], inputs: np.ndarray) -> np.ndarray:
    """``(K, N)`` array of each teacher's argmax class for each input row."""
    _check_teachers(teachers)
    return np.stack([predict(t, inputs) for t in teachers])


def vote_counts(teachers: Sequence[ModelParams], inputs: np.ndarray) -> np.ndarray:
    """``(N, n_classes)`` vote counts, one histogram per input row."""
    preds = teacher_predictions(teachers, inputs)
    n_classes = teachers[0].num_classes
    counts = np.zeros((preds.shape[1], n_classes), dtype=np.int64)
    for row in preds:
        counts[np.arange(preds.shape[1]), row] += 1
    return counts


def collect_votes(teachers: Sequence[ModelParams], x: np.ndarray) -> VoteHistogram:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected one feature vector, got shape {x.shape}")
    return VoteHistogram(vote_counts(teachers, x[None, :])[0])


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF transform of ``u`` in (-0.5, 0.5) to a clamped Laplace(0, scale) draw."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore"):
        x = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    x = np.clip(x, -LAPLACE_CLAMP * scale, LAPLACE_CLAMP * scale)
    return float(x) if x.ndim == 0 else x


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    if not scale > 0:
        raise InputError(f"Laplace scale must be positive, got {scale}")
    return laplace_from_uniform(rng.random(size) - 0.5, scale)


def noisy_argmax(hist: VoteHistogram | np.ndarray, gamma: float, rng: np.random.Generator | None = None) -> int:
    counts = np.asarray(hist.counts if isinstance(hist, VoteHistogram) else hist, dtype=np.float64)
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    if math.isfinite(gamma):
        if rng is None:
            raise InputError("a generator is required when noise is enabled")
        counts = counts + laplace_sample(1.0 / gamma, rng, counts.shape)
    return int(np.argmax(counts))


def ensemble_predict(teachers: Sequence[ModelParams], x: np.ndarray) -> int:
    return int(np.argmax(collect_votes(teachers, x).counts))


def ensemble_predict_batch(teachers: Sequence[ModelParams], inputs: np.ndarray) -> np.ndarray:
    return np.argmax(vote_counts(teachers, inputs), axis=1)


def ensemble_accuracy(teachers: Sequence[ModelParams], inputs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(ensemble_predict_batch(teachers, inputs) == np.asarray(labels)))


def query_rng(seed: int, query_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, query_index])


def generate_private_labels(
    teachers: Sequence[ModelParams],
    public_inputs: np.ndarray,
    gamma: float,
    seed: int = 0,
) -> tuple[list[LabeledExample], PrivacyLedger]:
    """Label every public input by noisy plurality vote.

    Query ``i`` draws its noise from a stream seeded by ``(seed, i)``, so a
    label does not depend on the order queries are answered in.
    """
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    public_inputs = np.asarray(public_inputs, dtype=np.float64)
    ledger = PrivacyLedger(gamma)
    if public_inputs.shape[0] == 0:
        return [], ledger
    counts = vote_counts(teachers, public_inputs)
    out = []
    for i, (x, hist) in enumerate(zip(public_inputs, counts)):
        label = noisy_argmax(hist, gamma, query_rng(seed, i) if math.isfinite(gamma) else None)
        out.append(LabeledExample(x, label, i))
    return out, ledger.spend(len(out))


def write_labels_csv(
    path: str | os.PathLike,
    examples: Sequence[LabeledExample],
    ledger: PrivacyLedger,
    source_indices: Sequence[int] | None = None,
) -> None:
    """Write ``query_index,label,epsilon_cumulative`` rows and an ``.indices`` sidecar.

    The sidecar lists, one per line, the row of the source dataset that each
    query labelled.
    """
    path = os.fspath(path)
    per_query = PrivacyLedger(ledger.gamma)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_index", "label", "epsilon_cumulative"])
        for ex in examples:
            eps = per_query.spend(ex.query_index + 1).epsilon_total
            w.writerow([ex.query_index, ex.label, f"{eps:.6f}"])
    if source_indices is None:
        source_indices = [ex.query_index for ex in examples]
    with open(path + ".indices", "w") as fh:
        fh.writelines(f"{int(i)}\n" for i in source_indices)
