"""Canned experiment scenarios and scheduler-name resolution.

The preliminary scenario is a single client with a single sensor; the
real-world scenario is 4 clients with 8 sensors each and one corrupted
sensor, compared against high- and low-frequency fixed-interval baselines.
Drift kinds cycle through the three image-corruption analogues.
"""

from __future__ import annotations

from dataclasses import replace

from .config import SimConfig
from .data import CorruptionKind, DriftEvent, DriftSchedule
from .errors import ConfigError

__all__ = [
    "SCENARIO_NAMES",
    "scenario_config",
    "scenario_schedulers",
    "apply_scheduler",
    "drift_times",
]

SCENARIO_NAMES = ("preliminary", "realworld", "custom")

_DRIFT_KINDS = ("structured_overlay", "edge_extract", "local_shuffle_blur")

# (deploy_interval_s, upload_interval_s) per named fixed baseline.
_FIXED_PAIRS = {
    "preliminary": {"fixed": (300.0, 350.0)},
    "realworld": {
        "fixed": (1200.0, 900.0),
        "fixed-high": (1200.0, 900.0),
        "fixed-low": (3000.0, 2800.0),
    },
}


def drift_times(pretrain_s: float, first_offset_s: float, subsequent_s: float, count: int):
    """Drift instants: one `first_offset_s` after the initial deployment,
    then every `subsequent_s`."""
    start = pretrain_s + first_offset_s
    return [start + k * subsequent_s for k in range(count)]


def _schedule(times, sensor: int) -> DriftSchedule:
    events = tuple(
        DriftEvent(t, sensor, CorruptionKind(_DRIFT_KINDS[i % len(_DRIFT_KINDS)]))
        for i, t in enumerate(times)
    )
    return DriftSchedule(events)


def scenario_config(name: str, seed: int = 0, config_path=None) -> SimConfig:
    """Base configuration (scheduler left at flare) for a named scenario."""
    if name == "preliminary":
        return SimConfig(
            num_clients=1,
            sensors_per_client=1,
            pretrain_s=1500.0,
            duration_s=4800.0,
            deploy_interval_s=300.0,
            upload_interval_s=350.0,
            drift=_schedule(drift_times(1500.0, 500.0, 800.0, 3), sensor=0),
            seed=seed,
        )
    if name == "realworld":
        return SimConfig(
            num_clients=4,
            sensors_per_client=8,
            pretrain_s=4000.0,
            duration_s=11500.0,
            deploy_interval_s=1200.0,
            upload_interval_s=900.0,
            drift=_schedule(drift_times(4000.0, 1000.0, 2500.0, 3), sensor=0),
            seed=seed,
        )
    if name == "custom":
        if config_path is None:
            raise ConfigError("the custom scenario needs --config pointing at a YAML file")
        config = SimConfig.from_file(config_path)
        return replace(config, seed=seed) if seed is not None else config
    raise ConfigError(
        f"unknown scenario {name!r}; valid scenarios: {', '.join(SCENARIO_NAMES)}"
    )


def scenario_schedulers(name: str) -> tuple[str, ...]:
    """Scheduler names a scenario can run."""
    if name == "realworld":
        return ("flare", "fixed", "fixed-high", "fixed-low", "none")
    return ("flare", "fixed", "none")


def apply_scheduler(config: SimConfig, scenario: str, scheduler: str) -> SimConfig:
    """Specialize a base scenario config for one scheduler under test."""
    valid = scenario_schedulers(scenario)
    if scheduler not in valid:
        raise ConfigError(
            f"unknown scheduler {scheduler!r} for scenario {scenario!r}; "
            f"valid schedulers: {', '.join(valid)}"
        )
    if scheduler in ("flare", "none"):
        return config.with_scheduler(scheduler)
    pairs = _FIXED_PAIRS.get(scenario)
    if pairs is None:  # custom scenario: use the file's own intervals
        return config.with_scheduler(
            "fixed", config.deploy_interval_s, config.upload_interval_s
        )
    deploy_s, upload_s = pairs[scheduler]
    return config.with_scheduler("fixed", deploy_s, upload_s)
