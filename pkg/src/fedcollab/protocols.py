"""Simulated worker/aggregator network running FedAvg and FedCollabNN.

FedAvg: every round each worker runs one local pass of minibatch SGD over
its shard. Workers then secret-share their flattened parameters with each
other, forward partial sums to the aggregator, and receive the average.

FedCollabNN: workers never exchange parameters. Each round a worker

1. applies the gradient of the previously broadcast aggregate loss to its
   own model (skipped in round 0, when no aggregate exists yet),
2. runs a forward pass on its next minibatch,
3. secret-shares the resulting scalar loss with the other workers.

The aggregator adds the partial sums, reduces (sum or mean) and broadcasts
one scalar back. The other workers' losses are constants with respect to
``theta_k``, so the gradient of the aggregate reduces to the worker's own
loss gradient times ``d L_agg / d L_k`` (1 for sum, 1/K for mean). That
gradient is taken through the forward graph cached in step 2 of the
previous round, i.e. the one whose loss entered the broadcast value.

Execution is sequential in worker-id order; every reduction is ordered by
worker id, so a run is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import secret_sharing as ss
from .data import MnistDataset, partition_iid
from .errors import ConfigError, InputError, ShapeError, UsageError
from .nn_core import (
    DEFAULT_HIDDEN_SIZES,
    ForwardCache,
    ModelParams,
    backward,
    cross_entropy_loss,
    evaluate,
    forward,
    init_model,
    mlp_sizes,
    sgd_step,
)
from .pate import ensemble_accuracy

logger = logging.getLogger(__name__)

AGGREGATOR = "agg"
_BATCH_STREAM = 1
_SHARE_STREAM = 2


class Mode(str, enum.Enum):
    FEDAVG = "fedavg"
    FEDCOLLAB = "fedcollab"


class Reduction(str, enum.Enum):
    SUM = "sum"
    AVERAGE = "average"


class MessageKind(str, enum.Enum):
    PARAM_SHARE = "ParamShare"
    PARAMS_UP = "ParamsUp"
    PARAMS_DOWN = "ParamsDown"
    LOSS_SHARE = "LossShare"
    PARTIAL_SUM = "PartialSum"
    AGG_LOSS_DOWN = "AggLossDown"


@dataclass(frozen=True, slots=True)
class Message:
    round: int
    kind: MessageKind
    sender: str
    receiver: str
    payload_type: str  # "RingElement", "RingVector" or "ModelParams"
    payload_bytes: int


@dataclass
class MessageLog:
    messages: list[Message] = field(default_factory=list)

    def send(self, round_: int, kind: MessageKind, sender: str, receiver: str, payload) -> None:
        if isinstance(payload, ModelParams):
            ptype, nbytes = "ModelParams", payload.num_params * 8
        elif isinstance(payload, np.ndarray):
            ptype, nbytes = "RingVector", payload.size * ss.RING_ELEMENT_BYTES
        else:
            ptype, nbytes = "RingElement", ss.RING_ELEMENT_BYTES
        self.messages.append(Message(round_, kind, sender, receiver, ptype, nbytes))

    def __len__(self) -> int:
        return len(self.messages)

    def dump_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            for m in self.messages:
                record = {
                    "round": m.round,
                    "kind": m.kind.value,
                    "sender": m.sender,
                    "receiver": m.receiver,
                    "payload_bytes": m.payload_bytes,
                }
                fh.write(json.dumps(record) + "\n")


def worker_name(k: int) -> str:
    return f"w{k}"


@dataclass(frozen=True)
class FederatedConfig:
    workers: int = 10
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN_SIZES
    reduction: Reduction = Reduction.AVERAGE
    fractional_bits: int = 16

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be a positive number, got {self.learning_rate}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden_sizes must be positive, got {self.hidden_sizes}")
        try:
            ss.FixedPointCodec(self.fractional_bits)
        except InputError as e:
            raise ConfigError(str(e)) from None

    @property
    def codec(self) -> ss.FixedPointCodec:
        return ss.FixedPointCodec(self.fractional_bits)

    def loss_scale(self) -> float:
        """Derivative of the aggregate loss with respect to one worker's loss."""
        return 1.0 if self.reduction is Reduction.SUM else 1.0 / self.workers


class MinibatchStream:
    """Endless minibatches of local indices, reshuffled at the start of every pass."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise InputError("cannot draw minibatches from an empty shard")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._order = np.empty(0, dtype=np.intp)
        self.cursor = 0

    @property
    def batches_per_pass(self) -> int:
        return -(-self.n // self.batch_size)

    def next_batch(self) -> np.ndarray:
        if self.cursor >= len(self._order):
            self._order = self.rng.permutation(self.n)
            self.cursor = 0
        batch = self._order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return batch

    def next_pass(self) -> list[np.ndarray]:
        return [self.next_batch() for _ in range(self.batches_per_pass)]


def batch_rng(seed: int, worker_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, worker_id, _BATCH_STREAM])


def share_rng(seed: int, worker_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, worker_id, _SHARE_STREAM])


@dataclass
class WorkerState:
    worker_id: int
    model: ModelParams
    x: np.ndarray  # this worker's shard only
    y: np.ndarray
    batches: MinibatchStream
    share_rng: np.random.Generator
    last_cache: ForwardCache | None = None
    last_labels: np.ndarray | None = None
    received_aggregate: float | None = None

    @property
    def name(self) -> str:
        return worker_name(self.worker_id)


@dataclass
class AggregatorState:
    mode: Mode
    reduction: Reduction = Reduction.AVERAGE
    round: int = 0
    last_aggregate: float | ModelParams | None = None


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    losses: tuple[float, ...]
    agg_loss: float
    bytes_per_link: int


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    losses: tuple[float, ...]
    accuracies: tuple[float, ...]
    agg_loss: float
    ensemble_accuracy: float
    bytes_per_link: int


@dataclass
class TrainingResult:
    timeline: list[EpochMetrics]
    workers: list[WorkerState]
    aggregator: AggregatorState
    log: MessageLog

    @property
    def models(self) -> list[ModelParams]:
        return [w.model for w in self.workers]


def federated_average(params: Sequence[ModelParams]) -> ModelParams:
    """Unweighted elementwise mean, accumulated in worker order.

    Computed as ``first + sum(p - first) / K`` so that averaging identical
    models returns them bit for bit.
    """
    if not params:
        raise InputError("cannot average zero models")
    first = params[0]
    if any(not first.same_shape(p) for p in params[1:]):
        raise ShapeError("models being averaged have different shapes")
    k = len(params)
    arrays = []
    for i, a in enumerate(first.arrays()):
        offset = np.zeros_like(a)
        for p in params[1:]:
            offset += p.arrays()[i] - a
        arrays.append(a + offset / k)
    return ModelParams(tuple(arrays[0::2]), tuple(arrays[1::2]))


def make_workers(
    dataset: MnistDataset, config: FederatedConfig, same_init: bool
) -> list[WorkerState]:
    """Shard ``dataset`` IID and initialise one worker per shard.

    With ``same_init`` every worker starts from the model seeded by
    ``config.seed``; otherwise worker ``k`` uses ``config.seed ^ k``.
    """
    shards = partition_iid(len(dataset), config.workers, config.seed)
    sizes = mlp_sizes(config.hidden_sizes, dataset.images.shape[1])
    shared = init_model(sizes, config.seed) if same_init else None
    workers = []
    for shard in shards:
        k = shard.worker_id
        local = dataset.subset(shard.indices)
        workers.append(
            WorkerState(
                worker_id=k,
                model=shared if same_init else init_model(sizes, config.seed ^ k),
                x=local.images,
                y=local.labels,
                batches=MinibatchStream(len(local), config.batch_size, batch_rng(config.seed, k)),
                share_rng=share_rng(config.seed, k),
            )
        )
    return workers


def local_sgd_pass(worker: WorkerState, learning_rate: float) -> float:
    """One pass of minibatch SGD over the worker's shard; returns the mean batch loss."""
    losses = []
    model = worker.model
    for idx in worker.batches.next_pass():
        logits, cache = forward(model, worker.x[idx])
        losses.append(cross_entropy_loss(logits, worker.y[idx]))
        model = sgd_step(model, backward(model, cache, worker.y[idx]), learning_rate)
    worker.model = model
    return float(np.mean(losses))


def secure_parameter_average(
    workers: list[WorkerState], codec: ss.FixedPointCodec, log: MessageLog, t: int
) -> ModelParams:
    k = len(workers)
    template = workers[0].model
    if k == 1:
        # a lone worker has nobody to hide from; its model is the average
        log.send(t, MessageKind.PARAMS_UP, workers[0].name, AGGREGATOR, template)
        return template
    flats = [w.model.flatten() for w in workers]
    ss.check_array_sum_range(flats, codec)
    share_sets = [ss.share_array(ss.encode_array(f, codec), k, w.share_rng) for f, w in zip(flats, workers)]
    partials = []
    for j, receiver in enumerate(workers):
        for i, sender in enumerate(workers):
            if i != j:
                log.send(t, MessageKind.PARAM_SHARE, sender.name, receiver.name, share_sets[i][j])
        partials.append(ss.reconstruct_array([share_sets[i][j] for i in range(k)]))
    for w, p in zip(workers, partials):
        log.send(t, MessageKind.PARAMS_UP, w.name, AGGREGATOR, p)
    total = ss.decode_array(ss.reconstruct_array(partials), codec)
    return template.unflatten(total / k)


def fedavg_round(
    workers: list[WorkerState],
    aggregator: AggregatorState,
    config: FederatedConfig,
    log: MessageLog,
) -> RoundMetrics:
    if aggregator.mode is not Mode.FEDAVG:
        raise UsageError("aggregator is not running FedAvg")
    t = aggregator.round
    losses = tuple(local_sgd_pass(w, config.learning_rate) for w in workers)
    averaged = secure_parameter_average(workers, config.codec, log, t)
    for w in workers:
        log.send(t, MessageKind.PARAMS_DOWN, AGGREGATOR, w.name, averaged)
        w.model = averaged
    aggregator.last_aggregate = averaged
    aggregator.round += 1
    return RoundMetrics(t, losses, float(np.mean(losses)), averaged.num_params * 8)


def _collab_worker_step(worker: WorkerState, t: int, learning_rate: float, loss_scale: float) -> float:
    if t > 0:
        if worker.received_aggregate is None or worker.last_cache is None:
            raise UsageError(f"{worker.name} has no aggregate loss to descend on")
        grads = backward(worker.model, worker.last_cache, worker.last_labels, loss_scale)
        worker.model = sgd_step(worker.model, grads, learning_rate)
    idx = worker.batches.next_batch()
    logits, cache = forward(worker.model, worker.x[idx])
    worker.last_cache, worker.last_labels = cache, worker.y[idx]
    return cross_entropy_loss(logits, worker.last_labels)


def fedcollab_round(
    workers: list[WorkerState],
    aggregator: AggregatorState,
    config: FederatedConfig,
    log: MessageLog,
) -> RoundMetrics:
    if aggregator.mode is not Mode.FEDCOLLAB:
        raise UsageError("aggregator is not running FedCollabNN")
    t = aggregator.round
    k = len(workers)
    codec = config.codec
    losses = tuple(_collab_worker_step(w, t, config.learning_rate, config.loss_scale()) for w in workers)

    encoded = [ss.encode_fixed(v, codec) for v in losses]
    ss.check_sum_range(encoded)
    share_sets = [ss.share(e, k, w.share_rng) for e, w in zip(encoded, workers)]
    partials = []
    for j, receiver in enumerate(workers):
        for i, sender in enumerate(workers):
            if i != j:
                log.send(t, MessageKind.LOSS_SHARE, sender.name, receiver.name, share_sets[i].shares[j])
        partials.append(ss.reconstruct([share_sets[i].shares[j] for i in range(k)]))
    for w, p in zip(workers, partials):
        log.send(t, MessageKind.PARTIAL_SUM, w.name, AGGREGATOR, p)

    total = ss.decode_fixed(ss.reconstruct(partials), codec)
    agg = total if aggregator.reduction is Reduction.SUM else total / k
    down = ss.encode_fixed(agg, codec)
    for w in workers:
        log.send(t, MessageKind.AGG_LOSS_DOWN, AGGREGATOR, w.name, down)
        w.received_aggregate = ss.decode_fixed(down, codec)
    aggregator.last_aggregate = agg
    aggregator.round += 1
    return RoundMetrics(t, losses, agg, ss.RING_ELEMENT_BYTES)


def rounds_per_epoch(workers: Sequence[WorkerState]) -> int:
    """FedCollabNN rounds that show each worker (about) one pass of its shard."""
    return max(w.batches.batches_per_pass for w in workers)


def _evaluate_epoch(
    epoch: int,
    workers: list[WorkerState],
    test: MnistDataset,
    losses: Sequence[float],
    agg_loss: float,
    bytes_per_link: int,
) -> EpochMetrics:
    models = [w.model for w in workers]
    accs = tuple(evaluate(m, test.images, test.labels) for m in models)
    ens = ensemble_accuracy(models, test.images, test.labels)
    return EpochMetrics(epoch, tuple(float(v) for v in losses), accs, float(agg_loss), ens, bytes_per_link)


def run_training(
    mode: Mode | str,
    config: FederatedConfig,
    train: MnistDataset,
    test: MnistDataset,
) -> TrainingResult:
    """Train ``config.workers`` workers for ``config.epochs`` epochs.

    The timeline starts with an epoch-0 entry describing the initial
    models (for FedCollabNN that entry holds the forward-only round 0), then
    one entry per epoch with test accuracy of every worker and of their
    plurality-vote ensemble.
    """
    mode = Mode(mode)
    if len(test) == 0:
        raise InputError("test set is empty")
    workers = make_workers(train, config, same_init=mode is Mode.FEDAVG)
    aggregator = AggregatorState(mode, config.reduction)
    log = MessageLog()
    timeline = []

    if mode is Mode.FEDAVG:
        init_losses = []
        for w in workers:
            logits, _ = forward(w.model, w.x)
            init_losses.append(cross_entropy_loss(logits, w.y))
        timeline.append(_evaluate_epoch(0, workers, test, init_losses, np.mean(init_losses), 0))
        for epoch in range(1, config.epochs + 1):
            m = fedavg_round(workers, aggregator, config, log)
            timeline.append(_evaluate_epoch(epoch, workers, test, m.losses, m.agg_loss, m.bytes_per_link))
            logger.info("fedavg epoch %d: agg loss %.4f", epoch, m.agg_loss)
    else:
        m = fedcollab_round(workers, aggregator, config, log)
        timeline.append(_evaluate_epoch(0, workers, test, m.losses, m.agg_loss, m.bytes_per_link))
        n_rounds = rounds_per_epoch(workers)
        for epoch in range(1, config.epochs + 1):
            rounds = [fedcollab_round(workers, aggregator, config, log) for _ in range(n_rounds)]
            losses = np.mean([r.losses for r in rounds], axis=0)
            agg = float(np.mean([r.agg_loss for r in rounds]))
            timeline.append(_evaluate_epoch(epoch, workers, test, losses, agg, ss.RING_ELEMENT_BYTES))
            logger.info("fedcollab epoch %d: agg loss %.4f", epoch, agg)
    return TrainingResult(timeline, workers, aggregator, log)
