"""
Federated training loop with over-the-air aggregation and its baselines.

Every round each client runs H local SGD steps from the current global
model and uploads the accumulated update. ESOAFL quantizes the updates on
a common grid and aggregates them over the fading channel; FedAvg averages
them exactly; FedPAQ averages independently quantized payloads.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from channel.channel import (
    ChannelMode,
    PowerPolicy,
    air_aggregate,
    exact_average,
)
from core.errors import DegenerateScaleError, DivergedClientError, ShapeError
from core.rng import RngStreams
from fl.accounting import RoundAccountant
from fl.config import FlConfig, Scheme, StopRule
from learnkit.datasets import (
    BatchSampler,
    Dataset,
    SyntheticSpec,
    generate_regression,
    generate_synthetic,
    train_test_split,
)
from learnkit.models import (
    LINEAR,
    GradientVector,
    Learner,
    ModelParams,
    accuracy,
    build_model,
    sgd_step,
    stochastic_gradient,
)
from learnkit.partition import ClientShard, partition_iid, partition_non_iid
from modem.modem import ModemLink, constellation_rows
from quantizer.quantizer import (
    dequantize,
    fit_common_scale,
    quantize,
    self_scale,
)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    loss: float
    accuracy: float
    comm_units: float
    energy_j: float
    grad_norm_sq: float = math.nan
    saturated: int = 0


@dataclass
class TrainingTrace:
    """
    Per-round records of one run. ``comm_units`` and ``energy_j`` are
    cumulative; ``rounds_to_target`` is the first round meeting the stop rule.
    """
    scheme: Scheme
    records: list[RoundRecord] = field(default_factory=list)
    converged: bool = False
    rounds_to_target: Optional[int] = None

    def append(self, record: RoundRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.round <= last.round:
                raise ShapeError('Trace rounds must be strictly increasing.')
            if record.energy_j < last.energy_j:
                raise ShapeError('Cumulative energy cannot decrease.')
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]

    def rows(self) -> Iterator[tuple]:
        for r in self.records:
            yield r.round, r.loss, r.accuracy, r.comm_units, r.energy_j


@dataclass(frozen=True)
class TrainingState:
    params: ModelParams
    round_index: int
    learning_rate: float
    comm_units: float = 0.0
    energy_j: float = 0.0
    grad_norm_sum: float = 0.0


@dataclass(frozen=True)
class ClientData:
    shard: ClientShard
    dataset: Dataset

    @property
    def client_id(self) -> int:
        return self.shard.client_id


def local_accumulate(model: Learner, client: ClientData, params: ModelParams,
                     local_iterations: int, eta: float,
                     rng: np.random.Generator, full_batch: bool = False,
                     round_index: int = 0) -> GradientVector:
    """
    Runs ``local_iterations`` SGD steps from ``params`` on the client's shard
    and returns ``eta`` times the sum of the gradients met on the way. The
    local model is discarded.

    Raises
    ------
    DivergedClientError
        If a gradient is not finite.
    """
    if local_iterations < 1:
        raise ShapeError(f'Need H >= 1, got {local_iterations}.')
    if eta == 0:
        return np.zeros(params.dimension)
    sampler = BatchSampler(client.shard.indices, client.shard.batch_size)
    sampler.start_round(rng)
    local = params
    total = np.zeros(params.dimension)
    for _ in range(local_iterations):
        batch = client.shard.indices if full_batch else sampler.next_batch()
        g = stochastic_gradient(model, local, client.dataset, batch)
        if not np.all(np.isfinite(g)):
            raise DivergedClientError(client.client_id, round_index)
        total += g
        local = sgd_step(local, g, eta)
    return eta * total


def global_update(params: ModelParams, aggregate: GradientVector,
                  server_scale: float) -> ModelParams:
    if aggregate.shape != params.vector.shape:
        raise ShapeError(
            f'Aggregate of shape {aggregate.shape} does not match parameters '
            f'{params.vector.shape}.')
    return params.replace(params.vector - server_scale * aggregate)


def build_clients(cfg: FlConfig, streams: RngStreams):
    """Draws the task, splits off the test set and shards the rest."""
    data = cfg.data
    seed = data.seed if data.seed is not None else streams.child_seed('data')
    if data.learner == LINEAR:
        full = generate_regression(data.n_features, data.n_samples, data.noise, seed)
    else:
        full = generate_synthetic(SyntheticSpec(
            n_classes=data.n_classes, n_features=data.n_features,
            n_samples=data.n_samples, separation=data.separation, seed=seed))
    train, test = train_test_split(full, data.test_fraction,
                                   streams.child_seed('split'))
    shard_seed = streams.child_seed('partition')
    if train.is_classification:
        shards = partition_non_iid(train, cfg.n_clients, data.non_iid_level,
                                   shard_seed, cfg.batch_size)
    else:
        shards = partition_iid(train.n_samples, cfg.n_clients, shard_seed,
                               cfg.batch_size)
    model = build_model(data.learner, data.n_features,
                        data.n_classes if train.is_classification else None,
                        data.n_hidden)
    clients = [ClientData(shard=s, dataset=train) for s in shards]
    return model, train, test, clients


class FederatedTrainer:
    """
    Runs one configured training job.

    Parameters
    ----------
    cfg : FlConfig
        Scheme, learning schedule, data, channel and energy settings.
    constellation_sink : Optional[list]
        When given and the channel is in symbol mode, received symbols are
        appended as ``(round, coord, i, q)`` rows.
    """

    def __init__(self, cfg: FlConfig, constellation_sink: Optional[list] = None):
        self.cfg = cfg
        self.streams = RngStreams(cfg.seed)
        self.model, self.train, self.test, self.clients = build_clients(cfg, self.streams)
        self.policy = PowerPolicy.for_probability(cfg.p_b, cfg.channel) \
            if cfg.scheme is Scheme.ESOAFL else None
        self.link = ModemLink(cfg.channel) \
            if cfg.channel.mode is ChannelMode.SYMBOL else None
        self.accountant = RoundAccountant(cfg, cfg.comm_params(self.model.dimension),
                                          cfg.energy.comp_params())
        self.constellation_sink = constellation_sink

    def initial_state(self) -> TrainingState:
        params = self.model.init_params(self.streams.generator('init'))
        return TrainingState(params=params, round_index=0,
                             learning_rate=self.cfg.learning_rate)

    def _client_updates(self, state: TrainingState) -> list[np.ndarray]:
        def work(client: ClientData):
            rng = self.streams.generator('client', client.client_id, state.round_index)
            return local_accumulate(self.model, client, state.params,
                                    self.cfg.local_iterations, state.learning_rate,
                                    rng, self.cfg.full_batch, state.round_index)

        with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
            return list(pool.map(work, self.clients))

    def _air_transport(self, updates, round_index):
        cfg = self.cfg
        channel_rng = self.streams.generator('channel', round_index)
        if cfg.infinite_precision:
            return air_aggregate(updates, cfg.channel, self.policy, channel_rng), 0
        try:
            scale = fit_common_scale(updates, cfg.bits)
        except DegenerateScaleError:
            logging.debug(f'Round {round_index}: all updates zero, sending zero payload')
            return np.zeros(len(updates[0])), 0
        payloads = [quantize(u, scale, self.streams.generator('quantize', k, round_index))
                    for k, u in enumerate(updates)]
        if self.link is not None:
            result = self.link.aggregate(payloads, self.policy, channel_rng)
            if self.constellation_sink is not None and result.received is not None:
                self.constellation_sink.extend(
                    constellation_rows(round_index + 1, result.received))
            return result.aggregate, result.saturated
        return air_aggregate([dequantize(p) for p in payloads], cfg.channel,
                             self.policy, channel_rng), 0

    def _paq_transport(self, updates, round_index):
        values = []
        for k, u in enumerate(updates):
            if not np.any(u):
                values.append(np.zeros_like(u))
                continue
            rng = self.streams.generator('quantize', k, round_index)
            values.append(dequantize(quantize(u, self_scale(u, self.cfg.bits), rng)))
        return exact_average(values), 0

    def aggregate(self, updates, round_index):
        if self.cfg.scheme is Scheme.FEDAVG:
            return exact_average(updates), 0
        if self.cfg.scheme is Scheme.FEDPAQ:
            return self._paq_transport(updates, round_index)
        return self._air_transport(updates, round_index)

    def run_round(self, state: TrainingState) -> tuple[TrainingState, RoundRecord]:
        updates = self._client_updates(state)
        aggregate, saturated = self.aggregate(updates, state.round_index)
        params = global_update(state.params, aggregate, self.cfg.server_scale)

        train_loss = self.model.loss(params, self.train)
        test_accuracy = accuracy(self.model, params, self.test) \
            if self.test.is_classification else math.nan
        grad_norm_sq = float(np.sum(self.model.gradient(params, self.train) ** 2))
        new_state = TrainingState(
            params=params,
            round_index=state.round_index + 1,
            learning_rate=state.learning_rate * self.cfg.lr_decay,
            comm_units=state.comm_units + self.accountant.units,
            energy_j=state.energy_j + self.accountant.energy_j,
            grad_norm_sum=state.grad_norm_sum + grad_norm_sq,
        )
        record = RoundRecord(round=new_state.round_index, loss=train_loss,
                             accuracy=test_accuracy,
                             comm_units=new_state.comm_units,
                             energy_j=new_state.energy_j,
                             grad_norm_sq=grad_norm_sq, saturated=saturated)
        return new_state, record

    def _target_met(self, state: TrainingState, record: RoundRecord) -> bool:
        if self.cfg.stop_rule is StopRule.GRAD_NORM:
            return state.grad_norm_sum / state.round_index <= self.cfg.target_loss
        return record.loss <= self.cfg.target_loss

    def run(self) -> TrainingTrace:
        cfg = self.cfg
        logging.info(f'Training {cfg.scheme.value}: K={cfg.n_clients}, '
                     f'H={cfg.local_iterations}, b={cfg.bits}, p_b={cfg.effective_p_b}, '
                     f'channel={cfg.channel.mode.value}, d={self.model.dimension}')
        trace = TrainingTrace(scheme=cfg.scheme)
        state = self.initial_state()
        for _ in range(cfg.max_rounds):
            state, record = self.run_round(state)
            trace.append(record)
            logging.debug(f'Round {record.round}: loss={record.loss:.5f}, '
                          f'accuracy={record.accuracy:.4f}')
            if self._target_met(state, record):
                trace.converged = True
                trace.rounds_to_target = record.round
                break
        if trace.converged:
            logging.info(f'Reached target after {trace.rounds_to_target} rounds')
        else:
            logging.warning(f'No convergence within {cfg.max_rounds} rounds, '
                            f'final loss {trace.final.loss:.5f}')
        return trace


def run_round(trainer: FederatedTrainer,
              state: TrainingState) -> tuple[TrainingState, RoundRecord]:
    return trainer.run_round(state)


def run_training(cfg: FlConfig, constellation_sink: Optional[list] = None) -> TrainingTrace:
    return FederatedTrainer(cfg, constellation_sink).run()
