"""Child processes for the two-process benchmarks.

Protocol on stdout: the line `READY` once the subscription exists, then a
single JSON line with the measurements. Logs go to stderr.
"""
import argparse
import json
import logging
import sys
import time

from src.graph.context import Context
from src.graph.executor import SingleThreadedExecutor
from src.interfaces.builtin import PERF_ARRAY
from src.tooling.loss import LOSS_QOS, LOSS_TOPIC
from src.tooling.perf import LatencySink
from src.transport.qos import QosProfile, Reliability

logger = logging.getLogger(__name__)

POLL = 0.05


def _spin_until_idle(executor, count, idle: float, max_time: float) -> None:
    """Spin until `idle` seconds pass without a new message (after the
    first) or `max_time` runs out."""
    started = time.time()
    last_count, last_change = 0, time.time()
    while time.time() - started < max_time:
        executor.spin_once(POLL)
        current = count()
        if current != last_count:
            last_count, last_change = current, time.time()
        elif current and time.time() - last_change >= idle:
            return
    logger.warning(f"Worker stopped at max time {max_time}s with {count()} messages")


def _ready() -> None:
    sys.stdout.write("READY\n")
    sys.stdout.flush()


def _report(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")
    sys.stdout.flush()


def perf_subscriber(args) -> int:
    qos = QosProfile(
        reliability=Reliability.RELIABLE if args.reliable == "1" else Reliability.BEST_EFFORT,
        depth=args.depth,
    )
    with Context(config=json.loads(args.config)) as context:
        executor = SingleThreadedExecutor([context])
        sink = LatencySink(context.create_node("perf_subscriber", start_parameter_services=False), qos)
        _ready()
        _spin_until_idle(executor, lambda: sink.received, idle=1.0, max_time=args.duration + 30.0)
        _report({"size": args.size, "latencies_ns": sink.latencies})
    return 0


def loss_subscriber(args) -> int:
    with Context(config=json.loads(args.config)) as context:
        executor = SingleThreadedExecutor([context])
        node = context.create_node("loss_subscriber", start_parameter_services=False)
        received: list = []
        node.create_subscription(LOSS_TOPIC, PERF_ARRAY, lambda _: received.append(time.time()), LOSS_QOS)
        _ready()
        _spin_until_idle(executor, lambda: len(received), idle=args.idle, max_time=args.max_time)
        _report({"received": received})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="minibus-worker", description=__doc__)
    sub = parser.add_subparsers(dest="role", required=True)

    perf = sub.add_parser("perf-sub", help="latency subscriber for perf INTER_PROCESS")
    perf.add_argument("--size", type=int, required=True)
    perf.add_argument("--duration", type=float, required=True)
    perf.add_argument("--reliable", choices=["0", "1"], default="0")
    perf.add_argument("--depth", type=int, default=5)
    perf.add_argument("--config", default="{}")
    perf.set_defaults(func=perf_subscriber)

    loss = sub.add_parser("loss-sub", help="tallying subscriber for the loss harness")
    loss.add_argument("--config", default="{}")
    loss.add_argument("--idle", type=float, default=3.0)
    loss.add_argument("--max-time", type=float, default=60.0)
    loss.set_defaults(func=loss_subscriber)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
