import json
import logging
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from src.graph.context import Context
from src.graph.executor import SingleThreadedExecutor
from src.interfaces.builtin import PERF_ARRAY
from src.shared.config import PERF_DEFAULT_DURATION, PERF_DEFAULT_RATE, PERF_DEFAULT_SIZES, PERF_SIZE_LABELS
from src.shared.errors import PartialResultError, ValidationError
from src.transport.qos import SENSOR_DATA_QOS, QosProfile

logger = logging.getLogger(__name__)

PERF_TOPIC = "/perf/array"
CSV_COLUMNS = ["size_bytes", "mode", "mean_latency_ms", "p95_latency_ms", "rate_hz", "cpu_percent"]
MATCH_TIMEOUT = 5.0
DRAIN_TIME = 0.5
CHILD_READY_TIMEOUT = 15.0


class PerfMode(str, Enum):
    INTER_PROCESS = "INTER_PROCESS"
    SINGLE_PROCESS = "SINGLE_PROCESS"
    INTRA_PROCESS = "INTRA_PROCESS"


@dataclass
class PerfConfig:
    mode: PerfMode = PerfMode.INTRA_PROCESS
    sizes: list = field(default_factory=lambda: list(PERF_DEFAULT_SIZES))
    rate: float = PERF_DEFAULT_RATE
    duration: float = PERF_DEFAULT_DURATION
    qos: QosProfile = SENSOR_DATA_QOS

    def __post_init__(self):
        self.mode = PerfMode(self.mode)
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ValidationError(f"Message sizes must be > 0, got {self.sizes}")
        if self.rate <= 0:
            raise ValidationError(f"Rate must be > 0, got {self.rate}")
        if self.duration <= 0:
            raise ValidationError(f"Duration must be > 0, got {self.duration}")


@dataclass
class PerfRow:
    size_bytes: int
    mode: str
    mean_latency_ms: float
    p95_latency_ms: float
    rate_hz: float
    cpu_percent: float
    sent: int = 0
    received: int = 0
    serializations: int = 0
    median_latency_ms: float = 0.0


@dataclass
class PerfResult:
    config: PerfConfig
    rows: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows])

    def to_csv(self, path: Optional[str] = None) -> str:
        frame = self.to_frame().reindex(columns=CSV_COLUMNS)
        text = frame.to_csv(index=False, float_format="%.3f", lineterminator="\n")
        if path:
            with open(path, "w") as f:
                f.write(text)
        return text


def size_label(size: int) -> str:
    return PERF_SIZE_LABELS.get(size, str(size))


def parse_size(text: str) -> int:
    """'4k' -> 4096, '2m' -> 2 MiB, plain digits are bytes."""
    text = text.strip().lower()
    for label_size, label in PERF_SIZE_LABELS.items():
        if text == label:
            return label_size
    multiplier = {"k": 1024, "m": 1024 * 1024}.get(text[-1:], 1)
    digits = text[:-1] if multiplier != 1 else text
    if not digits.isdigit():
        raise ValidationError(f"Bad message size {text!r}")
    return int(digits) * multiplier


def stamp_ns(clock) -> int:
    return int(round(clock.now() * 1e9)) if clock.virtual else time.time_ns()


def latency_stats(latencies_ns: list) -> tuple:
    """(mean ms, p95 ms); negative skew between hosts clamps to zero."""
    if not latencies_ns:
        return 0.0, 0.0
    ms = np.clip(np.asarray(latencies_ns, dtype=float) / 1e6, 0.0, None)
    return float(np.mean(ms)), float(np.percentile(ms, 95))


def median_latency(latencies_ns: list) -> float:
    if not latencies_ns:
        return 0.0
    return float(np.median(np.clip(np.asarray(latencies_ns, dtype=float) / 1e6, 0.0, None)))


class LatencySink:
    """Subscription side of a run: collects embedded publish stamps."""

    def __init__(self, node, qos: QosProfile):
        self.clock = node.context.clock
        self.latencies: list = []
        self.subscription = node.create_subscription(PERF_TOPIC, PERF_ARRAY, self._on_message, qos)

    def _on_message(self, message) -> None:
        self.latencies.append(stamp_ns(self.clock) - message.stamp_ns)

    @property
    def received(self) -> int:
        return len(self.latencies)


def publish_at_rate(publisher, executor, size: int, rate: float, duration: float) -> int:
    """Publish `rate * duration` messages on a fixed schedule, spinning in
    between. Returns the number published."""
    clock = executor.clock
    payload = bytes(size)
    total = int(rate * duration)
    period = 1.0 / rate
    start = clock.now()
    for seq in range(total):
        due = start + seq * period
        while clock.now() < due:
            executor.spin_once(due - clock.now())
        publisher.publish({"stamp_ns": stamp_ns(clock), "seq": seq, "data": payload})
        executor.spin_once(0.0)
    return total


def _in_process_row(config: PerfConfig, size: int, pub_node, sink: LatencySink, executor) -> PerfRow:
    publisher = pub_node.create_publisher(PERF_TOPIC, PERF_ARRAY, config.qos)
    try:
        if not executor.spin_until(lambda: publisher.matched_count > 0 and sink.subscription.matched_count > 0,
                                   MATCH_TIMEOUT):
            raise PartialResultError(f"Publisher and subscription did not match for size {size}")
        sink.latencies.clear()
        wall0, cpu0 = time.perf_counter(), time.process_time()
        sent = publish_at_rate(publisher, executor, size, config.rate, config.duration)
        executor.spin(DRAIN_TIME)
        wall, cpu = time.perf_counter() - wall0, time.process_time() - cpu0
        mean_ms, p95_ms = latency_stats(sink.latencies)
        return PerfRow(
            size_bytes=size,
            mode=config.mode.value,
            mean_latency_ms=mean_ms,
            p95_latency_ms=p95_ms,
            rate_hz=sink.received / config.duration,
            cpu_percent=100.0 * cpu / wall if wall > 0 else 0.0,
            sent=sent,
            received=sink.received,
            serializations=publisher.serialization_count,
            median_latency_ms=median_latency(sink.latencies),
        )
    finally:
        publisher.destroy()
        pub_node.publishers.remove(publisher)


def _run_in_process(config: PerfConfig, base_config: dict, network, clock) -> PerfResult:
    result = PerfResult(config)
    intra = config.mode == PerfMode.INTRA_PROCESS
    settings = dict(base_config, intra_process=intra)
    pub_context = Context(config=settings, network=network, clock=clock)
    sub_context = pub_context if intra else Context(config=settings, network=network, clock=clock)
    executor = SingleThreadedExecutor([pub_context] if intra else [pub_context, sub_context])
    try:
        pub_node = pub_context.create_node("perf_publisher", start_parameter_services=False)
        sub_node = sub_context.create_node("perf_subscriber", start_parameter_services=False)
        sink = LatencySink(sub_node, config.qos)
        for size in config.sizes:
            try:
                row = _in_process_row(config, size, pub_node, sink, executor)
            except PartialResultError as e:
                raise PartialResultError(str(e), partial=result) from None
            if row.received == 0:
                raise PartialResultError(f"Nothing received at size {size_label(size)}", partial=result)
            logger.info(f"{config.mode.value} {size_label(size)}: mean={row.mean_latency_ms:.3f}ms "
                        f"p95={row.p95_latency_ms:.3f}ms rate={row.rate_hz:.1f}Hz")
            result.rows.append(row)
    finally:
        pub_context.shutdown()
        sub_context.shutdown()
    return result


def _child_command(config: PerfConfig, size: int, base_config: dict) -> list:
    return [
        sys.executable, "-m", "src.tooling.worker", "perf-sub",
        "--size", str(size),
        "--duration", str(config.duration + DRAIN_TIME),
        "--reliable", "1" if config.qos.reliable else "0",
        "--depth", str(config.qos.depth),
        "--config", json.dumps(base_config),
    ]


def _run_inter_process(config: PerfConfig, base_config: dict) -> PerfResult:
    """Subscriber in a child process per size; it reports latencies as one
    JSON line on stdout."""
    result = PerfResult(config)
    for size in config.sizes:
        child = subprocess.Popen(_child_command(config, size, base_config), stdout=subprocess.PIPE, text=True)
        try:
            ready = child.stdout.readline().strip()
            if ready != "READY":
                raise PartialResultError(f"Subscriber process failed to start ({ready!r})", partial=result)
            with Context(config=base_config) as context:
                executor = SingleThreadedExecutor([context])
                node = context.create_node("perf_publisher", start_parameter_services=False)
                publisher = node.create_publisher(PERF_TOPIC, PERF_ARRAY, config.qos)
                if not executor.spin_until(lambda: publisher.matched_count > 0, CHILD_READY_TIMEOUT):
                    raise PartialResultError(f"Subscriber process never matched for size {size}", partial=result)
                wall0, cpu0 = time.perf_counter(), time.process_time()
                sent = publish_at_rate(publisher, executor, size, config.rate, config.duration)
                wall, cpu = time.perf_counter() - wall0, time.process_time() - cpu0
                executor.spin(DRAIN_TIME)
            out, _ = child.communicate(timeout=config.duration + 30)
            report = json.loads(out.strip().splitlines()[-1]) if out.strip() else {}
        except (subprocess.TimeoutExpired, json.JSONDecodeError) as e:
            child.kill()
            raise PartialResultError(f"Subscriber process aborted at size {size}: {e}", partial=result) from None
        finally:
            if child.poll() is None:
                child.kill()
        latencies = report.get("latencies_ns", [])
        if not latencies:
            raise PartialResultError(f"Nothing received at size {size_label(size)}", partial=result)
        mean_ms, p95_ms = latency_stats(latencies)
        result.rows.append(PerfRow(
            size_bytes=size, mode=config.mode.value, mean_latency_ms=mean_ms, p95_latency_ms=p95_ms,
            rate_hz=len(latencies) / config.duration,
            cpu_percent=100.0 * cpu / wall if wall > 0 else 0.0,
            sent=sent, received=len(latencies), serializations=publisher.serialization_count,
            median_latency_ms=median_latency(latencies),
        ))
    return result


def run_perf(config: PerfConfig, base_config: Optional[dict] = None, network=None, clock=None) -> PerfResult:
    """Latency/rate sweep over message sizes.

    Pass a SimulatedNetwork (and optionally a VirtualClock) to keep the
    in-process modes off real sockets. INTER_PROCESS always uses UDP.
    """
    base_config = dict(base_config or {})
    logger.info(f"Perf run: mode={config.mode.value} sizes={[size_label(s) for s in config.sizes]} "
                f"rate={config.rate}Hz duration={config.duration}s qos={config.qos.describe()}")
    if config.mode == PerfMode.INTER_PROCESS:
        if network is not None:
            raise ValidationError("INTER_PROCESS mode needs real sockets")
        return _run_inter_process(config, base_config)
    return _run_in_process(config, base_config, network, clock)
