import json
import logging
import math
import subprocess
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from src.graph.context import Context
from src.graph.executor import SingleThreadedExecutor
from src.interfaces.builtin import PERF_ARRAY
from src.shared.clock import VirtualClock
from src.shared.config import LOSS_DEFAULTS
from src.shared.errors import PartialResultError, ValidationError
from src.transport.impairment import ImpairmentConfig
from src.transport.qos import HistoryKind, QosProfile, Reliability
from src.transport.simulated import SimulatedNetwork

logger = logging.getLogger(__name__)

LOSS_TOPIC = "/loss/array"
LOSS_QOS = QosProfile(reliability=Reliability.RELIABLE, history=HistoryKind.KEEP_ALL)
CSV_COLUMNS = ["loss_percent", "second", "sent", "received"]
# Participants must outlive several lost announcements in a row
LOSS_LEASE_DURATION = 10.0
MATCH_TIMEOUT = 15.0


@dataclass
class LossConfig:
    loss_percents: list = field(default_factory=lambda: list(LOSS_DEFAULTS["loss_percents"]))
    bandwidth_bps: float = LOSS_DEFAULTS["bandwidth_bps"]
    message_size: int = LOSS_DEFAULTS["message_size"]
    send_rate: float = LOSS_DEFAULTS["send_rate"]
    duration: float = LOSS_DEFAULTS["duration"]
    grace: float = LOSS_DEFAULTS["grace"]
    seed: int = 0

    def __post_init__(self):
        if any(not 0 <= p <= 100 for p in self.loss_percents):
            raise ValidationError(f"Loss percents must be within [0, 100], got {self.loss_percents}")
        if self.message_size <= 0 or self.send_rate <= 0 or self.duration <= 0:
            raise ValidationError("message_size, send_rate and duration must be > 0")
        if self.bandwidth_bps is not None and self.bandwidth_bps <= 0:
            raise ValidationError(f"bandwidth_bps must be > 0, got {self.bandwidth_bps}")
        if self.grace < 0:
            raise ValidationError(f"grace must be >= 0, got {self.grace}")

    @property
    def seconds(self) -> int:
        """Tally horizon: the send window plus the grace window."""
        return int(math.ceil(self.duration + self.grace))

    def impairment(self, loss_percent: float, seed_offset: int = 0) -> ImpairmentConfig:
        return ImpairmentConfig(
            drop_probability=loss_percent / 100.0,
            bandwidth_cap=self.bandwidth_bps,
            rng_seed=self.seed + seed_offset,
        )


def tally_per_second(stamps: list, start: float, seconds: int) -> np.ndarray:
    """Counts per whole second since `start`; stamps past the horizon are
    left out."""
    if not len(stamps):
        return np.zeros(seconds, dtype=int)
    offsets = np.floor(np.asarray(stamps, dtype=float) - start).astype(int)
    offsets = offsets[(offsets >= 0) & (offsets < seconds)]
    return np.bincount(offsets, minlength=seconds)[:seconds]


@dataclass
class LossRun:
    loss_percent: float
    sent: np.ndarray
    received: np.ndarray
    datagrams_dropped: int = 0

    @property
    def cumulative_sent(self) -> np.ndarray:
        return np.cumsum(self.sent)

    @property
    def cumulative_received(self) -> np.ndarray:
        return np.cumsum(self.received)

    @property
    def conserved(self) -> bool:
        """Nothing appears from nowhere, and by the end of the grace window
        everything sent has arrived."""
        cum_sent, cum_received = self.cumulative_sent, self.cumulative_received
        return bool(np.all(cum_received <= cum_sent)) and int(cum_received[-1]) == int(cum_sent[-1])

    @property
    def dipped(self) -> bool:
        """Some second received fewer than were sent in it."""
        seconds = min(len(self.sent), len(self.received))
        return bool(np.any(self.received[:seconds] < self.sent[:seconds]))


@dataclass
class LossResult:
    config: LossConfig
    runs: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for run in self.runs:
            frames.append(pd.DataFrame({
                "loss_percent": run.loss_percent,
                "second": np.arange(len(run.sent)),
                "sent": run.sent,
                "received": run.received,
                "cum_sent": run.cumulative_sent,
                "cum_received": run.cumulative_received,
            }))
        if not frames:
            return pd.DataFrame(columns=CSV_COLUMNS)
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path: Optional[str] = None) -> str:
        text = self.to_frame().reindex(columns=CSV_COLUMNS).to_csv(index=False, lineterminator="\n")
        if path:
            with open(path, "w") as f:
                f.write(text)
        return text


def _send_schedule(publisher, executor, config: LossConfig, payload: bytes) -> tuple:
    """Publish on a fixed schedule; returns (start, send stamps)."""
    clock = executor.clock
    total = int(config.send_rate * config.duration)
    start = clock.now()
    stamps = []
    for seq in range(total):
        due = start + seq / config.send_rate
        while clock.now() < due:
            executor.spin_once(due - clock.now())
        stamps.append(clock.now())
        publisher.publish({"stamp_ns": int(stamps[-1] * 1e9), "seq": seq, "data": payload})
    return start, stamps


def _simulated_run(config: LossConfig, loss_percent: float) -> LossRun:
    clock = VirtualClock()
    network = SimulatedNetwork(clock)
    settings = {"intra_process": False, "lease_duration": LOSS_LEASE_DURATION}
    pub_context = Context(config=settings, network=network, impairment=config.impairment(loss_percent, 0))
    sub_context = Context(config=settings, network=network, impairment=config.impairment(loss_percent, 1))
    executor = SingleThreadedExecutor([pub_context, sub_context])
    received: list = []
    try:
        publisher = pub_context.create_node("loss_publisher", start_parameter_services=False).create_publisher(
            LOSS_TOPIC, PERF_ARRAY, LOSS_QOS)
        subscription = sub_context.create_node("loss_subscriber", start_parameter_services=False).create_subscription(
            LOSS_TOPIC, PERF_ARRAY, lambda _: received.append(clock.now()), LOSS_QOS)
        if not executor.spin_until(lambda: publisher.matched_count and subscription.matched_count, MATCH_TIMEOUT):
            raise PartialResultError(f"Loss run at {loss_percent}% never matched")
        start, sent = _send_schedule(publisher, executor, config, bytes(config.message_size))
        executor.spin_until(lambda: clock.now() >= start + config.seconds, config.seconds + 1.0)
        dropped = pub_context.diagnostics.count("impair_dropped") + sub_context.diagnostics.count("impair_dropped")
    finally:
        pub_context.shutdown()
        sub_context.shutdown()
    return LossRun(loss_percent, tally_per_second(sent, start, config.seconds),
                   tally_per_second(received, start, config.seconds), dropped)


def _child_command(config: LossConfig, settings: dict) -> list:
    return [
        sys.executable, "-m", "src.tooling.worker", "loss-sub",
        "--config", json.dumps(settings),
        "--idle", str(config.grace + 1.0),
        "--max-time", str(MATCH_TIMEOUT + config.duration + config.grace + 10.0),
    ]


def _process_settings(base_config: dict, config: LossConfig, loss_percent: float, seed_offset: int) -> dict:
    return dict(
        base_config,
        intra_process=False,
        lease_duration=LOSS_LEASE_DURATION,
        impair_drop=loss_percent / 100.0,
        impair_bandwidth_bps=int(config.bandwidth_bps or 0),
        impair_seed=config.seed + seed_offset,
    )


def _process_run(config: LossConfig, loss_percent: float, base_config: dict) -> LossRun:
    """Publisher here, subscription in a child process, both impaired."""
    child = subprocess.Popen(
        _child_command(config, _process_settings(base_config, config, loss_percent, 1)),
        stdout=subprocess.PIPE, text=True,
    )
    try:
        if child.stdout.readline().strip() != "READY":
            raise PartialResultError(f"Subscriber process failed to start at {loss_percent}%")
        with Context(config=_process_settings(base_config, config, loss_percent, 0)) as context:
            executor = SingleThreadedExecutor([context])
            node = context.create_node("loss_publisher", start_parameter_services=False)
            publisher = node.create_publisher(LOSS_TOPIC, PERF_ARRAY, LOSS_QOS)
            if not executor.spin_until(lambda: publisher.matched_count > 0, MATCH_TIMEOUT):
                raise PartialResultError(f"Subscriber process never matched at {loss_percent}%")
            start, sent = _send_schedule(publisher, executor, config, bytes(config.message_size))
            # keep answering NACKs through the grace window
            executor.spin(max(start + config.seconds - time.time(), 0.0))
            dropped = context.diagnostics.count("impair_dropped")
        out, _ = child.communicate(timeout=config.grace + 30.0)
        report = json.loads(out.strip().splitlines()[-1])
    except (subprocess.TimeoutExpired, json.JSONDecodeError, IndexError) as e:
        raise PartialResultError(f"Subscriber process aborted at {loss_percent}%: {e}") from None
    finally:
        if child.poll() is None:
            child.kill()
    return LossRun(loss_percent, tally_per_second(sent, start, config.seconds),
                   tally_per_second(report.get("received", []), start, config.seconds), dropped)


def run_loss(config: LossConfig, base_config: Optional[dict] = None, simulated: bool = False) -> LossResult:
    """Per-second sent/received tallies for each loss percentage, RELIABLE
    QoS through the impairment layer."""
    result = LossResult(config)
    mode = "simulated" if simulated else "two processes"
    logger.info(f"Loss run ({mode}): losses={config.loss_percents}% size={config.message_size}B "
                f"rate={config.send_rate}Hz duration={config.duration}s bandwidth={config.bandwidth_bps}bps")
    for loss_percent in config.loss_percents:
        try:
            if simulated:
                run = _simulated_run(config, loss_percent)
            else:
                run = _process_run(config, loss_percent, dict(base_config or {}))
        except PartialResultError as e:
            raise PartialResultError(str(e), partial=result) from None
        logger.info(f"{loss_percent}% loss: sent={int(run.sent.sum())} received={int(run.received.sum())} "
                    f"conserved={run.conserved} dipped={run.dipped}")
        result.runs.append(run)
    return result
