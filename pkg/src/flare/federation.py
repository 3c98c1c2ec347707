"""Federated-averaging server and client training loop.

Clients hold a fixed-size local pool split into disjoint train/validation
parts plus a fixed held-out test split that sources the reference
confidences shipped with deployments. Uploaded sensor data replaces the
oldest training samples FIFO so the pool size never changes, and the
validation part is re-drawn from the updated training part afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .client_scheduler import StabilityState
from .data import LabeledDataset
from .errors import ContractError
from .model import (
    Layer,
    ModelParams,
    SerializedModel,
    confidences,
    cross_entropy_loss,
    deserialize_model,
    sgd_step,
)
from .stats import ConfidenceSample

__all__ = [
    "ClientState",
    "ServerState",
    "make_client",
    "local_train_round",
    "fedavg_aggregate",
    "ingest_sensor_data",
    "deployment_reference",
]


@dataclass(frozen=True)
class ClientState:
    """One training node: model, local data pool, scheduler state, sensors."""

    client_id: int
    model: ModelParams
    features: np.ndarray = field(repr=False)   # local pool, train + validation
    labels: np.ndarray = field(repr=False)
    arrival: np.ndarray = field(repr=False)    # per-sample age counter, higher = newer
    next_arrival: int
    val_idx: np.ndarray = field(repr=False)    # sorted indices of the validation part
    test: LabeledDataset = field(repr=False)   # fixed held-out split for references
    scheduler: StabilityState
    sensor_ids: tuple[int, ...]
    n_classes: int
    train_losses: tuple[float, ...] = ()
    val_losses: tuple[float, ...] = ()
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)

    @property
    def train_size(self) -> int:
        return self.features.shape[0] - self.val_idx.size

    def train_split(self) -> LabeledDataset:
        mask = np.ones(self.features.shape[0], dtype=bool)
        mask[self.val_idx] = False
        return LabeledDataset(self.features[mask], self.labels[mask], self.n_classes)

    def val_split(self) -> LabeledDataset:
        return LabeledDataset(
            self.features[self.val_idx], self.labels[self.val_idx], self.n_classes
        )


@dataclass(frozen=True)
class ServerState:
    """Aggregation server: the global model and a round counter."""

    global_model: ModelParams
    round: int = 0


def make_client(
    client_id: int,
    model: ModelParams,
    local_data: LabeledDataset,
    test_data: LabeledDataset,
    scheduler: StabilityState,
    sensor_ids,
    val_fraction: float,
    rng: np.random.Generator,
) -> ClientState:
    n = len(local_data)
    n_val = int(round(val_fraction * n))
    if not (0 < n_val < n):
        raise ContractError(f"validation fraction {val_fraction} leaves no usable split of {n}")
    val_idx = np.sort(rng.choice(n, size=n_val, replace=False))
    return ClientState(
        client_id=client_id,
        model=model,
        features=local_data.features.copy(),
        labels=local_data.labels.copy(),
        arrival=np.arange(n, dtype=np.int64),
        next_arrival=n,
        val_idx=val_idx,
        test=test_data,
        scheduler=scheduler,
        sensor_ids=tuple(sensor_ids),
        n_classes=local_data.n_classes,
        rng=rng,
    )


def _check_same_shape(a: ModelParams, b: ModelParams, what: str):
    shapes_a = [l.weights.shape for l in a.layers]
    shapes_b = [l.weights.shape for l in b.layers]
    if shapes_a != shapes_b:
        raise ContractError(f"{what}: layer shapes {shapes_b} do not match {shapes_a}")


def local_train_round(
    client: ClientState,
    start_model: ModelParams,
    rounds: int,
    learning_rate: float,
    batch_size: int | None = None,
) -> ClientState:
    """Run `rounds` descent steps from `start_model`, recording the post-step
    train and validation loss after each step.

    Both recorded losses are measured on the full splits; the optional
    mini-batch only drives the descent step. With batch_size=None descent is
    deterministic and the loss-difference deviation decays toward zero,
    starving the stability scheduler; a mini-batch keeps the parameters
    jittering so the deviation holds a stationary floor.
    """
    if rounds < 1:
        raise ContractError(f"rounds must be >= 1, got {rounds}")
    _check_same_shape(client.model, start_model, "start model")
    train = client.train_split()
    val = client.val_split()
    if batch_size is not None and not (1 <= batch_size <= len(train)):
        raise ContractError(
            f"batch size must lie in [1, {len(train)}], got {batch_size}"
        )
    model = start_model
    tr_losses, va_losses = [], []
    for _ in range(rounds):
        if batch_size is None:
            batch = train
        else:
            batch = train.subset(client.rng.integers(0, len(train), size=batch_size))
        model = sgd_step(model, batch, learning_rate)
        tr_losses.append(cross_entropy_loss(model, train))
        va_losses.append(cross_entropy_loss(model, val))
    return replace(
        client,
        model=model,
        train_losses=client.train_losses + tuple(tr_losses),
        val_losses=client.val_losses + tuple(va_losses),
    )


def fedavg_aggregate(local_models) -> ModelParams:
    """Parameter-wise mean of local models weighted by their sample counts."""
    local_models = list(local_models)
    if not local_models:
        raise ContractError("need at least one local model to aggregate")
    counts = [c for _, c in local_models]
    if any(c <= 0 for c in counts):
        raise ContractError(f"sample counts must be positive, got {counts}")
    first = local_models[0][0]
    for m, _ in local_models[1:]:
        _check_same_shape(first, m, "aggregation")
    total = float(sum(counts))
    layers = []
    for k in range(len(first.layers)):
        w_acc = np.zeros_like(first.layers[k].weights, dtype=float)
        b_acc = np.zeros_like(first.layers[k].biases, dtype=float)
        for m, c in local_models:
            w_acc += (c / total) * m.layers[k].weights
            b_acc += (c / total) * m.layers[k].biases
        layers.append(Layer(w_acc, b_acc, first.layers[k].activation))
    return ModelParams(tuple(layers))


def ingest_sensor_data(client: ClientState, upload: LabeledDataset) -> ClientState:
    """Fold uploaded raw data into the training part of the pool.

    The |upload| oldest training samples are overwritten in place (FIFO), so
    the pool and both split sizes stay fixed. The validation part is left
    alone here on purpose: while it still reflects the pre-upload data, the
    train/validation loss gap carries the full signature of the new data,
    which is exactly what the stability scheduler keys on. Call
    refresh_validation once the model has re-stabilized (at deployment) to
    bring the validation part back in line with the training mixture.
    """
    if upload.dim != client.features.shape[1]:
        raise ContractError(
            f"upload dim {upload.dim} != client feature dim {client.features.shape[1]}"
        )
    if upload.labels.max() >= client.n_classes:
        raise ContractError("upload labels exceed the client's class count")
    if len(upload) > client.train_size:
        raise ContractError(
            f"upload of {len(upload)} rows exceeds train split of {client.train_size}"
        )
    mask = np.ones(client.features.shape[0], dtype=bool)
    mask[client.val_idx] = False
    train_pos = np.where(mask)[0]
    oldest = train_pos[np.argsort(client.arrival[train_pos], kind="stable")][: len(upload)]

    features = client.features.copy()
    labels = client.labels.copy()
    arrival = client.arrival.copy()
    features[oldest] = upload.features
    labels[oldest] = upload.labels
    arrival[oldest] = client.next_arrival + np.arange(len(upload))

    return replace(
        client,
        features=features,
        labels=labels,
        arrival=arrival,
        next_arrival=client.next_arrival + len(upload),
    )


def refresh_validation(client: ClientState) -> ClientState:
    """Re-draw the validation part from the current training part.

    The displaced validation samples return to training duty, so both split
    sizes and disjointness are preserved.
    """
    mask = np.ones(client.features.shape[0], dtype=bool)
    mask[client.val_idx] = False
    train_pos = np.where(mask)[0]
    new_val = np.sort(client.rng.choice(train_pos, size=client.val_idx.size, replace=False))
    return replace(client, val_idx=new_val)


def deployment_reference(blob: SerializedModel, test_data: LabeledDataset) -> ConfidenceSample:
    """Reference confidences for a deployment: the blob is decoded first so the
    sample reflects the model exactly as the sensor will run it (this also
    makes quantized deployments self-consistent)."""
    model = deserialize_model(blob.data)
    return ConfidenceSample(confidences(model, test_data.features))
