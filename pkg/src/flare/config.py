"""Simulation configuration: validation and YAML round-trip.

Every field of SimConfig is expressible in a YAML config file; constraint
violations raise ConfigError messages naming the violated constraint.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import yaml

from .data import CorruptionKind, DriftEvent, DriftSchedule
from .errors import ConfigError

__all__ = ["SimConfig", "SCHEDULER_KINDS"]

SCHEDULER_KINDS = ("flare", "fixed", "none")


@dataclass(frozen=True)
class SimConfig:
    """Everything a simulation run depends on, seed included."""

    # Topology
    num_clients: int = 1
    sensors_per_client: int = 1

    # Scheduler under test
    scheduler: str = "flare"
    deploy_interval_s: float | None = None   # fixed scheduler only
    upload_interval_s: float | None = None   # fixed scheduler only

    # Scheduler parameters
    alpha: float = 8.0
    beta: float = 0.3
    phi: float = 0.2
    window_len: int = 10
    monitor_batch: int = 200

    # Training. train_batch None = deterministic full-batch descent; the
    # default mini-batch keeps the loss-difference deviation on a stationary
    # noise floor, which the stability scheduler's thresholds presume.
    learning_rate: float = 0.1
    train_batch: int | None = 64
    hidden_dims: tuple[int, ...] = (32,)
    aggregate_every: int = 5
    sliding_window: bool = False
    quantize_deploy: bool = False

    # Virtual time
    round_s: float = 5.0
    batch_s: float = 10.0
    pretrain_s: float = 1500.0
    duration_s: float = 4800.0

    # Data allocation. The train split is deliberately sized at twice the
    # monitor batch so one uploaded batch replaces half the training data:
    # the loss disturbance has to clear the instability threshold (alpha
    # times the stable baseline) by a wide margin.
    classes: int = 10
    feature_dim: int = 64
    client_train: int = 400
    client_val: int = 100
    client_test: int = 200
    sensor_pool: int = 600

    drift: DriftSchedule = field(default_factory=DriftSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.scheduler not in SCHEDULER_KINDS:
            raise ConfigError(
                f"unknown scheduler {self.scheduler!r}; valid kinds: {', '.join(SCHEDULER_KINDS)}"
            )
        if not (self.alpha >= 0):
            raise ConfigError(f"alpha must satisfy alpha >= 0, got {self.alpha}")
        if not (0 <= self.beta <= self.alpha):
            raise ConfigError(
                f"beta must satisfy 0 <= beta <= alpha, got beta={self.beta}, alpha={self.alpha}"
            )
        if not (0 <= self.phi <= 1):
            raise ConfigError(f"phi must satisfy 0 <= phi <= 1, got {self.phi}")
        if self.window_len < 2:
            raise ConfigError(f"window length must be >= 2, got {self.window_len}")
        if self.monitor_batch < 1:
            raise ConfigError(f"monitor batch size must be >= 1, got {self.monitor_batch}")
        if self.num_clients < 1 or self.sensors_per_client < 1:
            raise ConfigError("topology needs at least 1 client and 1 sensor per client")
        for name in ("round_s", "batch_s", "pretrain_s", "duration_s", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.scheduler == "fixed":
            if not self.deploy_interval_s or self.deploy_interval_s <= 0:
                raise ConfigError("fixed scheduler needs deploy_interval_s > 0")
            if not self.upload_interval_s or self.upload_interval_s <= 0:
                raise ConfigError("fixed scheduler needs upload_interval_s > 0")
        if self.duration_s <= self.pretrain_s:
            raise ConfigError(
                f"duration_s {self.duration_s} must exceed pretrain_s {self.pretrain_s}"
            )
        if self.pretrain_s < self.window_len * self.round_s:
            raise ConfigError(
                "pretrain_s must cover at least one scheduler window "
                f"({self.window_len} rounds of {self.round_s} s)"
            )
        if self.classes <= 2:
            raise ConfigError(f"classes must satisfy classes > 2, got {self.classes}")
        if self.aggregate_every < 1:
            raise ConfigError(f"aggregate_every must be >= 1, got {self.aggregate_every}")
        for name in ("client_train", "client_val", "client_test", "sensor_pool"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.monitor_batch > self.client_train:
            raise ConfigError(
                f"monitor batch {self.monitor_batch} exceeds client train split "
                f"{self.client_train}; uploads could not be ingested"
            )
        if self.train_batch is not None and not (1 <= self.train_batch <= self.client_train):
            raise ConfigError(
                f"train_batch must lie in [1, {self.client_train}] or be null, "
                f"got {self.train_batch}"
            )
        n_sensors = self.num_clients * self.sensors_per_client
        for ev in self.drift.events:
            if ev.sensor >= n_sensors:
                raise ConfigError(
                    f"drift event at {ev.time_s} s targets sensor {ev.sensor}, "
                    f"but only {n_sensors} sensors exist"
                )
            if not (0 < ev.time_s <= self.duration_s):
                raise ConfigError(
                    f"drift time {ev.time_s} s outside the run duration {self.duration_s} s"
                )
        if not isinstance(self.hidden_dims, tuple):
            object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    @property
    def num_sensors(self) -> int:
        return self.num_clients * self.sensors_per_client

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.feature_dim, *self.hidden_dims, self.classes)

    def with_scheduler(self, scheduler: str, deploy_interval_s=None, upload_interval_s=None):
        return replace(
            self,
            scheduler=scheduler,
            deploy_interval_s=deploy_interval_s,
            upload_interval_s=upload_interval_s,
        )

    # -- YAML round-trip ----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["drift"] = [
            {
                "time_s": ev.time_s,
                "sensor": ev.sensor,
                "kind": ev.kind.name,
                "severity": ev.kind.severity,
            }
            for ev in self.drift.events
        ]
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        data = dict(raw)
        events = []
        for entry in data.pop("drift", []) or []:
            kind = CorruptionKind(entry["kind"], entry.get("severity"))
            events.append(DriftEvent(float(entry["time_s"]), int(entry["sensor"]), kind))
        data["drift"] = DriftSchedule(tuple(events))
        if "hidden_dims" in data:
            data["hidden_dims"] = tuple(data["hidden_dims"])
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "SimConfig":
        raw = yaml.safe_load(text)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping of settings")
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_yaml(f.read())
