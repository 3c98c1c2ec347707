"""Deterministic virtual-clock simulation of server, clients, and sensors.

One event loop advances simulated seconds and dispatches, in a fixed
per-timestamp order (drift, then sensor events, then client events, then
aggregation), the periodic work items of every node: sensors score
inference batches and may upload raw data, clients run training rounds and
may deploy models, and the server aggregates every few rounds. Every
transfer is charged to the ledger with its exact wire payload size, and
every KPI sample lands in the metrics log. Identical (config, seed) pairs
produce byte-identical outputs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

import numpy as np

from . import client_scheduler as cs
from .config import SimConfig
from .data import LabeledDataset, apply_corruption, generate_synthetic_dataset
from .errors import ContractError, NormalizationError
from .federation import (
    ClientState,
    ServerState,
    fedavg_aggregate,
    ingest_sensor_data,
    local_train_round,
    make_client,
    refresh_validation,
)
from .model import (
    confidences,
    convert_model,
    deserialize_model,
    evaluate_accuracy,
    init_model,
    serialized_size,
)
from .sensor_monitor import (
    SensorAction,
    initial_sensor_state,
    install_model,
    observe_inference_batch,
)
from .stats import ConfidenceSample, LossWindow
from .wire import encode_deployment, encode_upload

__all__ = [
    "TransferRecord",
    "CommLedger",
    "MetricsRow",
    "MetricsLog",
    "SimResult",
    "DriftLatency",
    "run_simulation",
    "detection_latency",
    "normalized_accuracy",
    "cumulative_bytes",
    "summarize",
]

LINKS = ("uplink", "downlink", "fl")
REASONS = ("deploy", "raw_data", "aggregate")


@dataclass(frozen=True)
class TransferRecord:
    time: float
    link: str       # uplink sensor->client, downlink client->sensor, fl client<->server
    bytes: int
    reason: str     # deploy | raw_data | aggregate
    client: int
    sensor: int | None = None


@dataclass
class CommLedger:
    """Append-only transfer log; the source of every data-volume KPI."""

    records: list[TransferRecord] = field(default_factory=list)

    def add(self, record: TransferRecord):
        if self.records and record.time < self.records[-1].time:
            raise ContractError("ledger times must be non-decreasing")
        if record.bytes <= 0:
            raise ContractError("ledger bytes must be positive")
        self.records.append(record)

    def total(self, links=LINKS) -> int:
        if isinstance(links, str):
            links = (links,)
        return sum(r.bytes for r in self.records if r.link in links)


@dataclass(frozen=True)
class MetricsRow:
    time: float
    sensor: int
    accuracy: float
    ks: float
    event: str      # "" | deploy | upload | drift


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)
    drift_events: list[tuple[float, int, str]] = field(default_factory=list)
    deployments: list[tuple[float, int]] = field(default_factory=list)
    # Every scheduler window evaluation: (time, client, sigma, reason).
    # reason "forced_stable" marks the baseline seeding at the forced deploy.
    sigma_windows: list[tuple[float, int, float, str]] = field(default_factory=list)


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    ledger: CommLedger
    metrics: MetricsLog


@dataclass(frozen=True)
class DriftLatency:
    drift_time: float
    sensor: int
    kind: str
    latency_s: float | None   # None = never detected


# ---------------------------------------------------------------------------
# Internal mutable simulation entities
# ---------------------------------------------------------------------------


class _Sensor:
    def __init__(self, sensor_id, client_id, pool, phi, batch_size, rng):
        self.sensor_id = sensor_id
        self.client_id = client_id
        self.pool_clean = pool
        self.pool = pool
        self.rng = rng
        self.state = initial_sensor_state(phi, batch_size)
        self.cached_acc: float | None = None

    def draw_batch(self, m: int) -> LabeledDataset:
        idx = self.rng.integers(0, len(self.pool), size=m)
        return LabeledDataset(
            self.pool.features[idx], self.pool.labels[idx], self.pool.n_classes
        )

    def accuracy(self) -> float:
        if self.cached_acc is None:
            self.cached_acc = evaluate_accuracy(self.state.model, self.pool)
        return self.cached_acc


class _Client:
    def __init__(self, state: ClientState):
        self.state = state
        self.consumed = 0          # loss-stream position already fed to the scheduler
        self.recent_sigmas: list[float] = []
        # Windows still to observe before the validation part realigns with
        # the training mixture after an ingestion (0 = nothing pending).
        self.val_refresh_after = 0

    def level_sigma(self) -> float:
        """The latest window deviation, floored at 90% of its rolling median.

        A single window's deviation estimate has only w - 1 degrees of
        freedom and occasionally dips far below the sustained process level;
        fed raw, such flukes drag the stable baseline so low that the
        re-stabilization band becomes unreachable after a drift. The floor
        lets the baseline track genuine level drops while ignoring
        one-window quiet stretches; upward spikes pass through untouched.
        """
        raw = self.recent_sigmas[-1]
        return max(raw, 0.9 * float(np.median(self.recent_sigmas[-10:])))

    def stable_seed(self) -> float:
        """Robust level estimate for (re)anchoring the stable baseline at a
        deployment; a single window's deviation is too noisy to anchor the
        stability corridor on."""
        recent = self.recent_sigmas[-5:]
        return float(np.median(recent)) if recent else 0.0


class _Sim:
    """Wiring and event handlers for one run."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.ledger = CommLedger()
        self.metrics = MetricsLog()
        self.last_upload: dict[int, LabeledDataset] = {}

        seeds = np.random.SeedSequence(config.seed).spawn(
            2 + config.num_clients + config.num_sensors
        )
        server_seed, phase_seed = seeds[0], seeds[1]
        client_seeds = seeds[2 : 2 + config.num_clients]
        sensor_seeds = seeds[2 + config.num_clients :]

        per_client = config.client_train + config.client_val + config.client_test
        total = config.num_clients * per_client + config.num_sensors * config.sensor_pool
        master = generate_synthetic_dataset(
            config.classes, config.feature_dim, total, config.seed
        )

        global_model = init_model(config.layer_dims, server_seed)
        self.server = ServerState(global_model)
        self.model_bytes = serialized_size(config.layer_dims)

        self.clients: list[_Client] = []
        offset = 0
        for cid in range(config.num_clients):
            local = master.subset(np.arange(offset, offset + config.client_train + config.client_val))
            offset += config.client_train + config.client_val
            test = master.subset(np.arange(offset, offset + config.client_test))
            offset += config.client_test
            sensor_ids = range(
                cid * config.sensors_per_client, (cid + 1) * config.sensors_per_client
            )
            state = make_client(
                client_id=cid,
                model=global_model,
                local_data=local,
                test_data=test,
                scheduler=cs.initial_state(config.alpha, config.beta, config.window_len),
                sensor_ids=sensor_ids,
                val_fraction=config.client_val / (config.client_train + config.client_val),
                rng=np.random.default_rng(client_seeds[cid]),
            )
            self.clients.append(_Client(state))
            self.ledger.add(
                TransferRecord(0.0, "fl", self.model_bytes, "aggregate", cid)
            )

        self.sensors: list[_Sensor] = []
        for sid in range(config.num_sensors):
            pool = master.subset(np.arange(offset, offset + config.sensor_pool))
            offset += config.sensor_pool
            self.sensors.append(
                _Sensor(
                    sensor_id=sid,
                    client_id=sid // config.sensors_per_client,
                    pool=pool,
                    phi=config.phi,
                    batch_size=config.monitor_batch,
                    rng=np.random.default_rng(sensor_seeds[sid]),
                )
            )

        phase_rng = np.random.default_rng(phase_seed)
        self.deploy_phase = 0.0
        self.upload_phase = 0.0
        if config.scheduler == "fixed":
            self.deploy_phase = float(phase_rng.uniform(0.0, config.deploy_interval_s))
            self.upload_phase = float(phase_rng.uniform(0.0, config.upload_interval_s))

    # -- event handlers ------------------------------------------------------

    def _metrics_row(self, t, sensor: _Sensor, ks, event=""):
        self.metrics.rows.append(
            MetricsRow(t, sensor.sensor_id, sensor.accuracy(), ks, event)
        )

    def handle_drift(self, t, drift_index: int):
        event = self.config.drift.events[drift_index]
        sensor = self.sensors[event.sensor]
        corruption_seed = self.config.seed + 7919 * (drift_index + 1)
        sensor.pool = apply_corruption(sensor.pool_clean, event.kind, corruption_seed)
        sensor.cached_acc = None
        self.metrics.drift_events.append((t, event.sensor, event.kind.name))
        if sensor.state.model is not None:
            self._metrics_row(t, sensor, sensor.state.prev_ks, "drift")

    def handle_batch(self, t, sensor_id: int):
        sensor = self.sensors[sensor_id]
        if sensor.state.model is None:
            return
        batch = sensor.draw_batch(self.config.monitor_batch)
        decision = observe_inference_batch(sensor.state, batch.features, batch.labels)
        sensor.state = decision.state
        event = ""
        if decision.action is SensorAction.SEND_DATA and self.config.scheduler == "flare":
            self._upload(t, sensor, decision.upload)
            event = "upload"
        self._metrics_row(t, sensor, decision.ks_value, event)

    def handle_fixed_upload(self, t, sensor_id: int):
        sensor = self.sensors[sensor_id]
        if sensor.state.model is None:
            return
        buffer = sensor.state.buffer or sensor.draw_batch(self.config.monitor_batch)
        self._upload(t, sensor, buffer)
        self._metrics_row(t, sensor, sensor.state.prev_ks, "upload")

    def _upload(self, t, sensor: _Sensor, data: LabeledDataset):
        payload = encode_upload(data)
        self.ledger.add(
            TransferRecord(
                t, "uplink", len(payload), "raw_data", sensor.client_id, sensor.sensor_id
            )
        )
        self.last_upload[sensor.sensor_id] = data
        client = self.clients[sensor.client_id]
        client.state = ingest_sensor_data(client.state, data)
        # Leave the validation part stale until the scheduler has observed
        # two windows of the divergence; refreshing immediately would mask
        # the very loss gap the stability check keys on.
        client.val_refresh_after = 2

    def handle_round(self, t, client_id: int):
        client = self.clients[client_id]
        client.state = local_train_round(
            client.state,
            client.state.model,
            1,
            self.config.learning_rate,
            batch_size=self.config.train_batch,
        )
        if self.config.scheduler == "flare":
            self._run_scheduler(t, client)

    def _run_scheduler(self, t, client: _Client):
        cfg = self.config
        stream_len = len(client.state.train_losses)
        while True:
            if cfg.sliding_window:
                if stream_len < cfg.window_len or client.consumed >= stream_len:
                    break
                start = stream_len - cfg.window_len
                client.consumed = stream_len
            else:
                if stream_len - client.consumed < cfg.window_len:
                    break
                start = client.consumed
                client.consumed += cfg.window_len
            window = LossWindow(
                np.asarray(client.state.train_losses[start : start + cfg.window_len]),
                np.asarray(client.state.val_losses[start : start + cfg.window_len]),
            )
            client.recent_sigmas.append(window.std)
            decision = cs.advance(client.state.scheduler, client.level_sigma())
            client.state = replace(client.state, scheduler=decision.state)
            self.metrics.sigma_windows.append(
                (t, client.state.client_id, decision.sigma, decision.reason)
            )
            if client.val_refresh_after > 0:
                client.val_refresh_after -= 1
                if client.val_refresh_after == 0:
                    client.state = refresh_validation(client.state)
            if decision.action is cs.ClientAction.DEPLOY_MODEL:
                self.deploy(t, client)

    def deploy(self, t, client: _Client):
        cfg = self.config
        if client.val_refresh_after > 0:
            client.state = refresh_validation(client.state)
            client.val_refresh_after = 0
        if cfg.scheduler == "flare":
            # Deployment declares the model stable; the deviation observed
            # around this point becomes the new stable baseline. Without the
            # re-anchor the baseline only ever ratchets down and the
            # re-stabilization band drifts out of reach of the post-drift
            # noise floor.
            client.state = replace(
                client.state,
                scheduler=cs.force_stable(client.state.scheduler, client.stable_seed()),
            )
        blob = convert_model(client.state.model, quantize=cfg.quantize_deploy)
        deployed = deserialize_model(blob.data)
        for sid in client.state.sensor_ids:
            sensor = self.sensors[sid]
            ref_data = self.last_upload.get(sid, client.state.test)
            reference = ConfidenceSample(confidences(deployed, ref_data.features))
            payload = encode_deployment(blob, reference)
            sensor.state = install_model(sensor.state, blob, reference)
            sensor.cached_acc = None
            self.ledger.add(
                TransferRecord(
                    t, "downlink", len(payload), "deploy", client.state.client_id, sid
                )
            )
            self._metrics_row(t, sensor, sensor.state.prev_ks, "deploy")
        self.metrics.deployments.append((t, client.state.client_id))

    def handle_forced_deploy(self, t):
        for client in self.clients:
            if self.config.scheduler == "flare":
                self.metrics.sigma_windows.append(
                    (t, client.state.client_id, client.stable_seed(), "forced_stable")
                )
            self.deploy(t, client)

    def handle_aggregate(self, t):
        locals_ = [(c.state.model, c.state.train_size) for c in self.clients]
        global_model = fedavg_aggregate(locals_)
        self.server = ServerState(global_model, self.server.round + 1)
        for client in self.clients:
            cid = client.state.client_id
            self.ledger.add(TransferRecord(t, "fl", self.model_bytes, "aggregate", cid))
            self.ledger.add(TransferRecord(t, "fl", self.model_bytes, "aggregate", cid))
            client.state = replace(client.state, model=global_model)


# Tie-break tiers: drift before sensor work before client work before
# aggregation, fixed for determinism.
_TIER_DRIFT = 0
_TIER_BATCH = 1
_TIER_FIXED_UPLOAD = 2
_TIER_ROUND = 3
_TIER_DEPLOY = 4
_TIER_AGGREGATE = 5


def _periodic(start, step, limit):
    t = start
    while t <= limit:
        yield t
        t += step


def run_simulation(config: SimConfig) -> SimResult:
    """Run one scenario to completion and return its ledger and metrics."""
    sim = _Sim(config)
    events = []
    seq = 0

    def push(t, tier, handler, arg=None):
        nonlocal seq
        heapq.heappush(events, (t, tier, seq, handler, arg))
        seq += 1

    for i, ev in enumerate(config.drift.events):
        push(ev.time_s, _TIER_DRIFT, sim.handle_drift, i)
    for sensor in sim.sensors:
        for t in _periodic(config.pretrain_s + config.batch_s, config.batch_s, config.duration_s):
            push(t, _TIER_BATCH, sim.handle_batch, sensor.sensor_id)
    if config.scheduler == "fixed":
        for sensor in sim.sensors:
            for t in _periodic(
                config.pretrain_s + sim.upload_phase,
                config.upload_interval_s,
                config.duration_s,
            ):
                push(t, _TIER_FIXED_UPLOAD, sim.handle_fixed_upload, sensor.sensor_id)
    for client in sim.clients:
        for t in _periodic(config.round_s, config.round_s, config.duration_s):
            push(t, _TIER_ROUND, sim.handle_round, client.state.client_id)
    push(config.pretrain_s, _TIER_DEPLOY, lambda t, _: sim.handle_forced_deploy(t), None)
    if config.scheduler == "fixed":
        for client in sim.clients:
            for t in _periodic(
                config.pretrain_s + sim.deploy_phase,
                config.deploy_interval_s,
                config.duration_s,
            ):
                push(t, _TIER_DEPLOY, lambda t, cid: sim.deploy(t, sim.clients[cid]),
                     client.state.client_id)
    agg_step = config.aggregate_every * config.round_s
    for t in _periodic(agg_step, agg_step, config.duration_s):
        push(t, _TIER_AGGREGATE, lambda t, _: sim.handle_aggregate(t), None)

    while events:
        t, _, _, handler, arg = heapq.heappop(events)
        handler(t, arg)

    return SimResult(config=config, ledger=sim.ledger, metrics=sim.metrics)


# ---------------------------------------------------------------------------
# KPI computations
# ---------------------------------------------------------------------------


def detection_latency(metrics: MetricsLog, ledger: CommLedger) -> list[DriftLatency]:
    """Per drift event, the delay until the affected sensor's first raw-data
    upload; None marks a drift that never produced one."""
    out = []
    for t_drift, sensor, kind in metrics.drift_events:
        uploads = [
            r.time
            for r in ledger.records
            if r.link == "uplink" and r.sensor == sensor and r.time >= t_drift
        ]
        latency = (min(uploads) - t_drift) if uploads else None
        out.append(DriftLatency(t_drift, sensor, kind, latency))
    return out


def mean_detection_latency(latencies) -> float | None:
    detected = [l.latency_s for l in latencies if l.latency_s is not None]
    return float(np.mean(detected)) if detected else None


def normalized_accuracy(metrics: MetricsLog) -> dict[int, np.ndarray]:
    """Per sensor, an (n, 2) array of (time, accuracy / accuracy-at-first-
    deployment). Raises NormalizationError on a zero baseline."""
    out = {}
    for row in metrics.rows:
        out.setdefault(row.sensor, []).append(row)
    series = {}
    for sensor, rows in out.items():
        baseline = next((r.accuracy for r in rows if r.event == "deploy"), rows[0].accuracy)
        if baseline <= 0.0:
            raise NormalizationError(
                f"sensor {sensor}: accuracy at first deployment is zero; "
                "cannot normalize (degenerate model)"
            )
        series[sensor] = np.array([(r.time, r.accuracy / baseline) for r in rows])
    return series


def cumulative_bytes(ledger: CommLedger, links=LINKS) -> np.ndarray:
    """(n, 2) array of (event time, running byte total) for matching links."""
    if isinstance(links, str):
        links = (links,)
    points = [(r.time, r.bytes) for r in ledger.records if r.link in links]
    if not points:
        return np.empty((0, 2))
    times = np.array([p[0] for p in points])
    totals = np.cumsum([p[1] for p in points])
    return np.column_stack([times, totals])


def summarize(result: SimResult) -> dict:
    """The per-run KPI row used by the summary table and CSV."""
    series = normalized_accuracy(result.metrics)
    drifted = sorted({s for _, s, _ in result.metrics.drift_events})
    focus = drifted if drifted else sorted(series)
    max_drop = max((1.0 - series[s][:, 1].min()) for s in series)
    final = float(np.mean([series[s][-1, 1] for s in focus]))
    latencies = detection_latency(result.metrics, result.ledger)
    mean_latency = mean_detection_latency(latencies)
    if not latencies:
        latency_cell = ""
    elif mean_latency is None:
        latency_cell = "undetected"
    else:
        latency_cell = f"{mean_latency:.1f}"
    return {
        "scheduler": result.config.scheduler,
        "max_drop_pct": f"{100.0 * max_drop:.2f}",
        "final_norm_acc_pct": f"{100.0 * final:.2f}",
        "avg_detection_latency_s": latency_cell,
        "uplink_bytes": result.ledger.total("uplink"),
        "downlink_bytes": result.ledger.total("downlink"),
        "fl_bytes": result.ledger.total("fl"),
    }
