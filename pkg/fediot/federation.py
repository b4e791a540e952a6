"""
Federated orchestration of the per-device autoencoders.

A communication round selects a random subset of clients, trains each of them
from the current global model on its own benign data, aggregates the returned
parameter vectors (FedAvg or FedAvgM), optionally retrains the aggregate on a
server-side baseline buffer, and broadcasts the result to every client.

Client training tasks are pure functions of (global params, client data,
client stream), so they may run concurrently; everything else is serialized
inside the round loop.
"""

from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from fediot.autoencoder import (
    ArchitectureSpec,
    LossTrace,
    ModelParams,
    OptimizerState,
    init_params,
    train_epochs,
)
from fediot.data_pipeline import DeviceDataset
from fediot.errors import ConfigurationError, FederationError
from fediot.numeric import Matrix, RngStream

logger = logging.getLogger(__name__)

CLIENT_WEIGHTINGS = ("by_sample_count", "uniform")
RETRAIN_SCHEDULES = ("per_round", "final", "none")


@dataclass
class FederatedConfig:
    """Federation hyperparameters; defaults match the reference training setup."""
    num_clients: int = 9
    num_selected: int = 4
    batch_size: int = 128
    baseline_num: int = 1000
    num_rounds: int = 4
    epochs: int = 10
    retrain_epochs: int = 10
    optimizer: str = "sgd"
    learning_rate: float = 0.012
    weight_decay: float = 1e-5
    momentum: float = 0.9
    aggregator: str = "fedavg"
    server_momentum_beta: float = 0.9
    client_weighting: str = "by_sample_count"
    retrain_schedule: str = "per_round"
    parallel_clients: bool = True
    seed: int = 0

    def validate(self) -> None:
        """
        Check ranges and enum values.

        Raises:
            ConfigurationError: On the first invalid field
        """
        for name in ("num_clients", "num_selected", "batch_size", "baseline_num"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("num_rounds", "epochs", "retrain_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.num_selected > self.num_clients:
            raise ConfigurationError(
                f"num_selected ({self.num_selected}) cannot exceed num_clients ({self.num_clients})"
            )
        if self.optimizer.lower() != "sgd":
            raise ConfigurationError(f"Only the SGD optimizer is supported, got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.weight_decay < 0 or self.momentum < 0:
            raise ConfigurationError("weight_decay and momentum must be >= 0")
        if not 0.0 <= self.server_momentum_beta < 1.0:
            raise ConfigurationError("server_momentum_beta must be in [0, 1)")
        if self.aggregator not in _AGGREGATORS:
            raise ConfigurationError(
                f"Unknown aggregator {self.aggregator!r}; known: {sorted(_AGGREGATORS)}"
            )
        if self.client_weighting not in CLIENT_WEIGHTINGS:
            raise ConfigurationError(f"client_weighting must be one of {CLIENT_WEIGHTINGS}")
        if self.retrain_schedule not in RETRAIN_SCHEDULES:
            raise ConfigurationError(f"retrain_schedule must be one of {RETRAIN_SCHEDULES}")

    def fresh_optimizer(self, params: ModelParams) -> OptimizerState:
        return OptimizerState.fresh(params, self.learning_rate, self.momentum, self.weight_decay)


@dataclass
class ClientState:
    """One device as seen by the orchestrator."""
    device_id: str
    dataset: DeviceDataset
    params: ModelParams
    opt_state: OptimizerState


@dataclass
class ServerState:
    """Global model, baseline buffer and the FedAvgM momentum buffer."""
    global_params: ModelParams
    baseline_buffer: Matrix
    momentum: Optional[ModelParams] = None
    retrain_error_log: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class LocalUpdate:
    """What a selected client sends back: full parameters plus its sample count."""
    params: ModelParams
    sample_count: int
    final_loss: Optional[float]
    client_index: int = -1


@dataclass
class RoundLog:
    """What happened in one communication round."""
    round_index: int
    selected: List[int]
    client_losses: Dict[int, Optional[float]]
    retrain_trace: LossTrace
    retrain_avg_error: Optional[float]
    wall_time_sec: float

    def to_record(self) -> Dict[str, object]:
        """JSON-serializable line for the round log."""
        return {
            "round": self.round_index,
            "selected": list(self.selected),
            "client_losses": {str(k): v for k, v in self.client_losses.items()},
            "retrain_trace": list(self.retrain_trace.epoch_losses),
            "retrain_avg_error": self.retrain_avg_error,
            "wall_time_sec": self.wall_time_sec,
        }


@dataclass
class FederationResult:
    """Final global model plus the per-round logs."""
    params: ModelParams
    rounds: List[RoundLog]
    server: ServerState
    wall_time_sec: float


def select_clients(num_clients: int, num_selected: int, stream: RngStream) -> List[int]:
    """
    Uniform sample of distinct client indices, returned sorted.

    Raises:
        ConfigurationError: If more clients are requested than exist
    """
    if not 1 <= num_selected <= num_clients:
        raise ConfigurationError(
            f"Cannot select {num_selected} of {num_clients} clients"
        )
    picked = stream.generator().choice(num_clients, size=num_selected, replace=False)
    return sorted(int(i) for i in picked)


def local_train(client: ClientState, global_params: ModelParams, cfg: FederatedConfig,
                stream: RngStream, activation: str = "relu") -> LocalUpdate:
    """
    Train a copy of the global model on the client's benign training rows.

    The client's momentum buffers start from zero every round.

    Raises:
        ConfigurationError: If the client has no training rows or shapes differ
    """
    data = client.dataset.train_benign
    if data.shape[0] == 0:
        raise ConfigurationError(f"{client.device_id}: no training rows")
    if not global_params.same_shape(client.params):
        raise ConfigurationError(f"{client.device_id}: local model shape differs from global")
    client.opt_state = cfg.fresh_optimizer(global_params)
    if cfg.epochs == 0:
        client.params = global_params
        return LocalUpdate(global_params, data.shape[0], None)
    params, trace = train_epochs(
        global_params.copy(), data, cfg.epochs, cfg.batch_size, client.opt_state, stream, activation
    )
    client.params = params
    return LocalUpdate(params, data.shape[0], trace.final)


def fedavg(params_list: Sequence[ModelParams], sample_counts: Sequence[int],
           weighting: str = "by_sample_count") -> ModelParams:
    """
    Coordinate-wise weighted mean of client parameters.

    Args:
        params_list: One parameter set per client
        sample_counts: Training rows per client (ignored for uniform weighting)
        weighting: "by_sample_count" or "uniform"

    Raises:
        ConfigurationError: On an empty list, mismatched shapes or bad weights
    """
    if not params_list:
        raise ConfigurationError("fedavg needs at least one client update")
    if len(sample_counts) != len(params_list):
        raise ConfigurationError("sample_counts must have one entry per client")
    reference = params_list[0]
    for p in params_list[1:]:
        if not p.same_shape(reference):
            raise ConfigurationError("Client parameter shapes differ")
    if weighting == "uniform":
        weights = np.full(len(params_list), 1.0 / len(params_list))
    elif weighting == "by_sample_count":
        counts = np.asarray(sample_counts, dtype=np.float64)
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ConfigurationError(f"Invalid sample counts {list(sample_counts)}")
        weights = counts / counts.sum()
    else:
        raise ConfigurationError(f"Unknown client weighting {weighting!r}")
    stacked = np.stack([p.flatten() for p in params_list])
    # each coordinate stays within the clients' [min, max]
    averaged = np.clip(weights @ stacked, stacked.min(axis=0), stacked.max(axis=0))
    return reference.like(averaged)


def fedavgm(server: ServerState, round_mean: ModelParams, beta: float) -> ModelParams:
    """
    Server momentum over the round's pseudo-gradient (server step 1).

    delta = global - round_mean; v = beta * v + delta; global = global - v.
    Evaluated as ``round_mean - beta * v_old``, which is the same update and
    equals ``round_mean`` exactly when beta is 0.

    Raises:
        FederationError: If the server has no momentum buffer
    """
    if server.momentum is None:
        raise FederationError("FedAvgM needs a server momentum buffer")
    if not round_mean.same_shape(server.global_params):
        raise ConfigurationError("Round mean shape differs from the global model")
    g = server.global_params.flatten()
    m = round_mean.flatten()
    v_old = server.momentum.flatten()
    server.momentum = round_mean.like(beta * v_old + (g - m))
    return round_mean.like(m - beta * v_old)


class Aggregator(Protocol):
    """Turns the selected clients' updates into the next global model."""

    def aggregate(self, server: ServerState, updates: Sequence[LocalUpdate],
                  cfg: FederatedConfig) -> ModelParams:
        ...


class FedAvgAggregator:
    def aggregate(self, server, updates, cfg):
        return fedavg([u.params for u in updates], [u.sample_count for u in updates], cfg.client_weighting)


class FedAvgMAggregator:
    def aggregate(self, server, updates, cfg):
        round_mean = fedavg([u.params for u in updates], [u.sample_count for u in updates], cfg.client_weighting)
        return fedavgm(server, round_mean, cfg.server_momentum_beta)


_AGGREGATORS: Dict[str, Aggregator] = {
    "fedavg": FedAvgAggregator(),
    "fedavgm": FedAvgMAggregator(),
}


def register_aggregator(name: str, aggregator: Aggregator) -> None:
    """Make a new aggregation rule selectable through ``FederatedConfig.aggregator``."""
    _AGGREGATORS[name] = aggregator


def get_aggregator(name: str) -> Aggregator:
    try:
        return _AGGREGATORS[name]
    except KeyError as e:
        raise FederationError(f"Unknown aggregator {name!r}") from e


def build_baseline_buffer(datasets: Sequence[DeviceDataset], baseline_num: int,
                          stream: RngStream) -> Matrix:
    """
    Pool ceil(baseline_num / num_clients) random training rows per device.

    Devices with fewer rows contribute all they have; the pooled rows are
    truncated to ``baseline_num``.
    """
    if not datasets:
        raise ConfigurationError("No datasets to build the baseline buffer from")
    per_device = math.ceil(baseline_num / len(datasets))
    parts = []
    for i, ds in enumerate(datasets):
        available = ds.train_benign.shape[0]
        take = min(per_device, available)
        if take < per_device:
            logger.warning(f"{ds.device_id}: only {available} rows for the baseline buffer (wanted {per_device})")
        rng = stream.derive(stream.purpose, client=i).generator()
        picked = rng.choice(available, size=take, replace=False)
        parts.append(ds.train_benign[picked])
    buffer = np.concatenate(parts, axis=0)[:baseline_num]
    logger.info(f"Baseline buffer: {buffer.shape[0]} rows from {len(datasets)} devices")
    return buffer


def retrain(server: ServerState, cfg: FederatedConfig, stream: RngStream,
            activation: str = "relu") -> Tuple[ModelParams, float]:
    """
    Retrain the freshly aggregated global model on the baseline buffer.

    The average error (sum of per-epoch losses divided by ``num_selected``)
    is appended to ``server.retrain_error_log``.

    Returns:
        Tuple of (retrained params, average error)
    """
    params, trace = retrain_with_trace(server, cfg, stream, activation)
    return params, server.retrain_error_log[-1] if trace is not None else 0.0


def retrain_with_trace(server: ServerState, cfg: FederatedConfig, stream: RngStream,
                       activation: str = "relu") -> Tuple[ModelParams, Optional[LossTrace]]:
    """Same as ``retrain`` but returns the per-epoch LossTrace (None when skipped)."""
    if server.baseline_buffer.shape[0] == 0:
        logger.warning("Baseline buffer is empty; skipping retraining")
        return server.global_params, None
    if cfg.retrain_epochs == 0:
        server.retrain_error_log.append(0.0)
        return server.global_params, LossTrace()
    params, trace = train_epochs(
        server.global_params.copy(),
        server.baseline_buffer,
        cfg.retrain_epochs,
        cfg.batch_size,
        cfg.fresh_optimizer(server.global_params),
        stream,
        activation,
    )
    avg_error = trace.total / cfg.num_selected
    server.retrain_error_log.append(avg_error)
    logger.info(f"Retrained on {server.baseline_buffer.shape[0]} baseline rows: avg_error={avg_error:.6f}")
    return params, trace


ClientStreamFn = Callable[[RngStream, int, int], RngStream]


def default_client_stream(root: RngStream, client: int, round_index: int) -> RngStream:
    return root.derive("local", client=client, round=round_index)


async def _train_selected(clients: Sequence[ClientState], selected: Sequence[int],
                          global_params: ModelParams, cfg: FederatedConfig, root: RngStream,
                          round_index: int, client_stream: ClientStreamFn,
                          activation: str) -> List[LocalUpdate]:
    def run(i: int) -> LocalUpdate:
        update = local_train(clients[i], global_params, cfg, client_stream(root, i, round_index), activation)
        return replace(update, client_index=i)

    if cfg.parallel_clients:
        return list(await asyncio.gather(*(asyncio.to_thread(run, i) for i in selected)))
    return [run(i) for i in selected]


async def run_federation_async(cfg: FederatedConfig, datasets: Sequence[DeviceDataset],
                               arch: Optional[ArchitectureSpec] = None,
                               client_stream: Optional[ClientStreamFn] = None) -> FederationResult:
    """
    Run ``cfg.num_rounds`` communication rounds.

    Args:
        cfg: Federation hyperparameters
        datasets: One prepared dataset per client, in client order
        arch: Autoencoder layout (defaults derived from the feature width)
        client_stream: Override of the per-client stream derivation

    Returns:
        FederationResult with the final global params and one RoundLog per round

    Raises:
        FederationError: If the dataset count does not match ``num_clients``
        ConfigurationError: On invalid hyperparameters or shapes
    """
    cfg.validate()
    if len(datasets) != cfg.num_clients:
        raise FederationError(f"Expected {cfg.num_clients} client datasets, got {len(datasets)}")
    feature_dim = datasets[0].feature_dim
    if any(ds.feature_dim != feature_dim for ds in datasets):
        raise ConfigurationError("All devices must share one feature width")
    arch = arch or ArchitectureSpec(input_dim=feature_dim)
    if arch.input_dim != feature_dim:
        raise ConfigurationError(f"Architecture expects {arch.input_dim} features, data has {feature_dim}")
    client_stream = client_stream or default_client_stream
    aggregator = get_aggregator(cfg.aggregator)
    activation = arch.hidden_activation

    root = RngStream(cfg.seed)
    global_params = init_params(arch, root.derive("init"))
    server = ServerState(
        global_params=global_params,
        baseline_buffer=build_baseline_buffer(datasets, cfg.baseline_num, root.derive("baseline")),
        momentum=global_params.zeros_like() if cfg.aggregator == "fedavgm" else None,
    )
    clients = [
        ClientState(ds.device_id, ds, global_params, cfg.fresh_optimizer(global_params))
        for ds in datasets
    ]

    logs: List[RoundLog] = []
    started = time.perf_counter()
    for r in range(cfg.num_rounds):
        round_start = time.perf_counter()
        selected = select_clients(cfg.num_clients, cfg.num_selected, root.derive("select", round=r))
        logger.info(f"Round {r + 1}/{cfg.num_rounds}: selected clients {selected}")

        updates = await _train_selected(clients, selected, server.global_params, cfg, root, r,
                                        client_stream, activation)
        for u in updates:
            logger.debug(f"  client {u.client_index}: n={u.sample_count} loss={u.final_loss}")

        server.global_params = aggregator.aggregate(server, updates, cfg)

        trace, avg_error = LossTrace(), None
        if cfg.retrain_schedule == "per_round" or (
            cfg.retrain_schedule == "final" and r == cfg.num_rounds - 1
        ):
            retrained, maybe_trace = retrain_with_trace(server, cfg, root.derive("retrain", round=r), activation)
            if maybe_trace is not None:
                trace, avg_error = maybe_trace, server.retrain_error_log[-1]
            server.global_params = retrained

        for client in clients:
            client.params = server.global_params

        log = RoundLog(
            round_index=r + 1,
            selected=selected,
            client_losses={u.client_index: u.final_loss for u in updates},
            retrain_trace=trace,
            retrain_avg_error=avg_error,
            wall_time_sec=time.perf_counter() - round_start,
        )
        logs.append(log)
        logger.info(f"Round {r + 1} done in {log.wall_time_sec:.2f}s")

    elapsed = time.perf_counter() - started
    return FederationResult(server.global_params, logs, server, elapsed)


def run_federation(cfg: FederatedConfig, datasets: Sequence[DeviceDataset],
                   arch: Optional[ArchitectureSpec] = None,
                   client_stream: Optional[ClientStreamFn] = None) -> FederationResult:
    """Synchronous entry point around ``run_federation_async``."""
    return asyncio.run(run_federation_async(cfg, datasets, arch, client_stream))


def train_local_models(cfg: FederatedConfig, datasets: Sequence[DeviceDataset],
                       arch: Optional[ArchitectureSpec] = None) -> List[ModelParams]:
    """
    Local-detection baseline: one model per device trained only on its own data.

    Each device starts from the same initial model the federation would use
    and trains for ``num_rounds * epochs`` epochs.
    """
    cfg.validate()
    if not datasets:
        raise ConfigurationError("No datasets to train on")
    arch = arch or ArchitectureSpec(input_dim=datasets[0].feature_dim)
    root = RngStream(cfg.seed)
    start = init_params(arch, root.derive("init"))
    epochs = cfg.num_rounds * cfg.epochs
    models = []
    for i, ds in enumerate(datasets):
        if epochs == 0:
            models.append(start)
            continue
        params, trace = train_epochs(
            start.copy(), ds.train_benign, epochs, cfg.batch_size,
            cfg.fresh_optimizer(start), root.derive("local-only", client=i), arch.hidden_activation,
        )
        logger.info(f"{ds.device_id}: local-only model trained, final loss {trace.final:.6f}")
        models.append(params)
    return models
