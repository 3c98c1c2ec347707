"""Sensor-side drift monitor.

The sensor holds the deployed model plus the reference confidence sample
shipped with it. Every inference batch is reduced to its confidence
distribution and compared against the reference with the two-sample KS
statistic; a jump of more than `phi` over the previous KS value triggers a
raw-data upload. Detection is label-free; labels ride along in the buffer
only so triggered uploads can feed retraining.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, ContractError, NoDeployedModelError
from .model import ModelParams, SerializedModel, confidences, deserialize_model
from .stats import ConfidenceSample, ks_statistic

__all__ = [
    "SensorAction",
    "SensorState",
    "MonitorDecision",
    "initial_sensor_state",
    "install_model",
    "observe_inference_batch",
]


class SensorAction(enum.Enum):
    CONTINUE_INFERENCE = "continue_inference"
    SEND_DATA = "send_data"


@dataclass(frozen=True)
class SensorState:
    """Monitor state for one sensor."""

    phi: float                 # trigger threshold on the KS increase
    batch_size: int            # inference window size m
    model: ModelParams | None = None
    reference: ConfidenceSample | None = field(default=None, repr=False)
    prev_ks: float = 0.0
    buffer: LabeledDataset | None = field(default=None, repr=False)


@dataclass(frozen=True)
class MonitorDecision:
    action: SensorAction
    state: SensorState
    ks_value: float
    upload: LabeledDataset | None = field(default=None, repr=False)


def initial_sensor_state(phi: float, batch_size: int) -> SensorState:
    if not (0.0 <= phi <= 1.0):
        raise ConfigError(f"phi must satisfy 0 <= phi <= 1, got {phi}")
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    return SensorState(phi=float(phi), batch_size=int(batch_size))


def install_model(
    state: SensorState, blob: SerializedModel, reference: ConfidenceSample
) -> SensorState:
    """Swap in a newly deployed model and its reference sample.

    The previous KS value resets to zero: the delta rule needs a baseline
    coherent with the model now running, otherwise a deployment that follows
    drift would immediately re-trigger. Malformed blobs raise
    DeploymentError and leave the caller's state untouched.
    """
    model = deserialize_model(blob.data)
    return replace(state, model=model, reference=reference, prev_ks=0.0)


def observe_inference_batch(
    state: SensorState, features, labels=None
) -> MonitorDecision:
    """Score one inference batch and decide whether to upload raw data.

    prev_ks advances to the new KS value on every batch regardless of the
    decision; only the increase relative to the previous batch can trigger,
    so a persistently high (or falling) KS value does not re-fire.
    """
    if state.model is None or state.reference is None:
        raise NoDeployedModelError("no model deployed; sensor is idle")
    x = np.atleast_2d(np.asarray(features))
    if x.shape[0] != state.batch_size:
        raise ContractError(f"expected batch of {state.batch_size} rows, got {x.shape[0]}")
    conf = confidences(state.model, x)
    ks_value = ks_statistic(state.reference.values, conf)

    buffer = None
    if labels is not None:
        buffer = LabeledDataset(x, labels, state.model.n_classes, "sensor_buffer")
    new_state = replace(state, prev_ks=ks_value, buffer=buffer)
    if ks_value - state.prev_ks > state.phi:
        return MonitorDecision(SensorAction.SEND_DATA, new_state, ks_value, upload=buffer)
    return MonitorDecision(SensorAction.CONTINUE_INFERENCE, new_state, ks_value)
