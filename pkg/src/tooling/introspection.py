import fnmatch
import logging
from typing import Optional

import numpy as np

from src.discovery.endpoints import EndpointKind
from src.interfaces import builtin
from src.interfaces.serialization import deserialize
from src.shared.config import LEASE_DURATION
from src.shared.errors import DecodeError, ValidationError
from src.transport.qos import Durability, HistoryKind, QosProfile, Reliability

logger = logging.getLogger(__name__)


def topic_matches(topic: str, patterns) -> bool:
    """Glob match ignoring leading slashes, so `chatter` and `/chat*` both
    select `/chatter`."""
    name = topic.lstrip("/")
    return any(fnmatch.fnmatchcase(name, p.lstrip("/")) for p in patterns)


def list_nodes(node) -> list:
    return node.get_node_names()


def list_topics(node, include_hidden: bool = False) -> list:
    """(name, types) for every topic; service and action plumbing is hidden
    unless asked for."""
    out = []
    for name, types in node.get_topic_names_and_types():
        if not include_hidden and (name.startswith("/svc/") or "/_action/" in name):
            continue
        out.append((name, types))
    return out


def list_services(node) -> list:
    return node.participant.graph.service_names_and_types()


def topic_publishers(node, topic: str) -> list:
    return node.participant.graph.endpoints_for(topic, EndpointKind.PUBLISHER)


def wait_for_publishers(node, executor, topic: str, timeout: float) -> list:
    """Spin until `topic` has at least one publisher in the graph."""
    executor.spin_until(lambda: bool(topic_publishers(node, topic)), timeout)
    publishers = topic_publishers(node, topic)
    if not publishers:
        raise ValidationError(f"Unknown topic {topic}: no publishers within {timeout}s")
    return publishers


def subscription_qos_for(publishers: list, depth: int = 10, keep_all: bool = False) -> QosProfile:
    """Weakest request every listed publisher can satisfy."""
    reliable = all(p.qos.reliable for p in publishers)
    durable = all(p.qos.transient_local for p in publishers)
    lease = max([p.qos.lease_duration for p in publishers] + [LEASE_DURATION])
    return QosProfile(
        reliability=Reliability.RELIABLE if reliable else Reliability.BEST_EFFORT,
        durability=Durability.TRANSIENT_LOCAL if durable else Durability.VOLATILE,
        history=HistoryKind.KEEP_ALL if keep_all else HistoryKind.KEEP_LAST,
        depth=depth,
        lease_duration=lease,
    )


def decode_raw(raw) -> Optional[dict]:
    """Decode a raw payload when its type is in the local catalogue."""
    descriptor = builtin.lookup(raw.type_name)
    if descriptor is None or descriptor.type_hash != raw.type_hash:
        return None
    try:
        return deserialize(raw.payload, descriptor).to_dict()
    except DecodeError as e:
        logger.warning(f"Undecodable sample on {raw.topic}: {e}")
        return None


class RateMonitor:
    """Arrival-rate statistics over a sliding window of receive times."""

    def __init__(self, window: int = 10_000):
        self.window = window
        self._stamps: list = []

    def add(self, stamp: float) -> None:
        self._stamps.append(stamp)
        if len(self._stamps) > self.window:
            del self._stamps[: len(self._stamps) - self.window]

    @property
    def count(self) -> int:
        return len(self._stamps)

    def stats(self) -> dict:
        if len(self._stamps) < 2:
            return {"rate_hz": 0.0, "min_s": 0.0, "max_s": 0.0, "std_s": 0.0, "window": len(self._stamps)}
        gaps = np.diff(np.asarray(self._stamps, dtype=float))
        mean = float(np.mean(gaps))
        return {
            "rate_hz": round(1.0 / mean, 3) if mean > 0 else 0.0,
            "min_s": round(float(np.min(gaps)), 6),
            "max_s": round(float(np.max(gaps)), 6),
            "std_s": round(float(np.std(gaps)), 6),
            "window": len(self._stamps),
        }
