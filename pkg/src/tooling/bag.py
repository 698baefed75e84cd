import logging
import struct
import time
from dataclasses import dataclass
from datetime import datetime
from typing import Iterator, Optional

import pandas as pd
import pytz

from src.graph.subscription import RawMessage
from src.interfaces import builtin
from src.shared.errors import BagFormatError, ValidationError
from src.tooling.introspection import subscription_qos_for, topic_matches, topic_publishers
from src.transport.qos import HistoryKind, QosProfile

logger = logging.getLogger(__name__)

BAG_MAGIC = b"MBAG"
BAG_VERSION = 1
_FILE_HEADER = struct.Struct("<4sH")
_STAMPS = struct.Struct("<QQH")
_TYPE_AND_LEN = struct.Struct("<QI")
PLAYBACK_QOS = QosProfile(history=HistoryKind.KEEP_ALL)


@dataclass(frozen=True)
class BagRecord:
    recv_mono_ns: int
    recv_wall_ns: int
    topic: str
    type_hash: int
    payload: bytes


def encode_record(record: BagRecord) -> bytes:
    topic = record.topic.encode("utf-8")
    return (
        _STAMPS.pack(record.recv_mono_ns, record.recv_wall_ns, len(topic))
        + topic
        + _TYPE_AND_LEN.pack(record.type_hash, len(record.payload))
        + bytes(record.payload)
    )


class BagWriter:
    """Appends records to a bag file. Receive stamps must not go backwards."""

    def __init__(self, path: str):
        self.path = path
        self._file = open(path, "wb")
        self._file.write(_FILE_HEADER.pack(BAG_MAGIC, BAG_VERSION))
        self._last_mono = 0
        self.count = 0

    def write(self, record: BagRecord) -> None:
        if record.recv_mono_ns < self._last_mono:
            raise ValidationError(
                f"Bag stamps must be non-decreasing: {record.recv_mono_ns} < {self._last_mono}"
            )
        self._last_mono = record.recv_mono_ns
        self._file.write(encode_record(record))
        self.count += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()
            logger.info(f"Bag {self.path} closed with {self.count} records")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _take(data: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(data):
        raise BagFormatError(f"Truncated {what}: need {size} bytes, have {len(data) - offset}", offset)
    return data[offset:offset + size]


def parse_bag(data: bytes) -> Iterator[BagRecord]:
    """Yield the records of an in-memory bag image."""
    header = _take(data, 0, _FILE_HEADER.size, "file header")
    magic, version = _FILE_HEADER.unpack(header)
    if magic != BAG_MAGIC:
        raise BagFormatError(f"Bad magic {magic!r}", 0)
    if version != BAG_VERSION:
        raise BagFormatError(f"Unsupported bag version {version}", 4)
    offset = _FILE_HEADER.size
    while offset < len(data):
        start = offset
        mono, wall, topic_len = _STAMPS.unpack(_take(data, offset, _STAMPS.size, "record header"))
        offset += _STAMPS.size
        try:
            topic = _take(data, offset, topic_len, "topic").decode("utf-8")
        except UnicodeDecodeError:
            raise BagFormatError("Topic is not valid UTF-8", offset) from None
        offset += topic_len
        type_hash, payload_len = _TYPE_AND_LEN.unpack(_take(data, offset, _TYPE_AND_LEN.size, "record header"))
        offset += _TYPE_AND_LEN.size
        payload = _take(data, offset, payload_len, "payload")
        offset += payload_len
        if not topic:
            raise BagFormatError("Empty topic name", start)
        yield BagRecord(mono, wall, topic, type_hash, payload)


def read_bag(path: str) -> list:
    with open(path, "rb") as f:
        return list(parse_bag(f.read()))


def type_name_for(type_hash: int) -> str:
    """Catalogue name for a hash; unknown types get a stable placeholder."""
    for descriptor in builtin.REGISTRY.values():
        if descriptor.type_hash == type_hash:
            return descriptor.name
    return f"bag/{type_hash:016x}"


def _stamp_pair(clock) -> tuple:
    if clock.virtual:
        ns = int(round(clock.now() * 1e9))
        return ns, ns
    return time.monotonic_ns(), time.time_ns()


class BagRecorder:
    """Subscribes raw to the selected topics and writes what arrives.

    Topics are globs (`/chatter`, `/sensors/*`); topics that appear after
    start are picked up by `refresh()`, which the CLI calls while spinning.
    """

    def __init__(self, node, patterns: list, writer: BagWriter):
        self.node = node
        self.patterns = list(patterns)
        self.writer = writer
        self.subscriptions: dict = {}
        self.counts: dict = {}

    def refresh(self) -> list:
        """Subscribe to newly discovered matching topics; returns their names."""
        added = []
        for topic, _ in self.node.get_topic_names_and_types():
            if topic in self.subscriptions or not topic_matches(topic, self.patterns):
                continue
            publishers = topic_publishers(self.node, topic)
            if not publishers:
                continue
            first = publishers[0]
            qos = subscription_qos_for(publishers, keep_all=True)
            self.subscriptions[topic] = self.node.create_raw_subscription(
                topic, first.type_name, first.type_hash, self._on_message, qos,
            )
            self.counts[topic] = 0
            added.append(topic)
            logger.info(f"Recording {topic} ({first.type_name}, {qos.describe()})")
        return added

    def _on_message(self, raw: RawMessage) -> None:
        mono, wall = _stamp_pair(self.node.context.clock)
        self.writer.write(BagRecord(mono, wall, raw.topic, raw.type_hash, raw.payload))
        self.counts[raw.topic] += 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def stop(self) -> None:
        for subscription in self.subscriptions.values():
            subscription.destroy()
            if subscription in self.node.subscriptions:
                self.node.subscriptions.remove(subscription)
        self.subscriptions.clear()


def record_bag(node, executor, patterns: list, path: str, duration: Optional[float] = None,
               max_messages: Optional[int] = None) -> dict:
    """Record until `duration` elapses, `max_messages` arrive or the
    operator interrupts. Returns the per-topic counts."""
    clock = executor.clock
    deadline = None if duration is None else clock.now() + duration
    with BagWriter(path) as writer:
        recorder = BagRecorder(node, patterns, writer)
        try:
            while True:
                recorder.refresh()
                if max_messages is not None and recorder.total >= max_messages:
                    break
                if deadline is not None and clock.now() >= deadline:
                    break
                executor.spin_once(0.05)
        except KeyboardInterrupt:
            logger.info("Recording interrupted")
        recorder.stop()
    logger.info(f"Recorded {sum(recorder.counts.values())} messages to {path}: {recorder.counts}")
    return dict(recorder.counts)


def play_bag(node, executor, records: list, rate: float = 1.0, match_timeout: float = 5.0,
             qos=None) -> int:
    """Republish records keeping inter-record gaps scaled by 1/`rate`.

    One raw publisher per (topic, type hash); playback waits up to
    `match_timeout` for each to match a subscriber. Returns the count
    published.
    """
    if rate <= 0:
        raise ValidationError(f"Playback rate must be > 0, got {rate}")
    if not records:
        return 0
    publishers = {}
    for record in records:
        key = (record.topic, record.type_hash)
        if key not in publishers:
            publishers[key] = node.create_raw_publisher(
                record.topic, type_name_for(record.type_hash), record.type_hash, qos or PLAYBACK_QOS,
            )
    executor.spin_until(lambda: all(p.matched_count for p in publishers.values()), match_timeout)

    clock = executor.clock
    start = clock.now()
    first_mono = records[0].recv_mono_ns
    for record in records:
        due = start + (record.recv_mono_ns - first_mono) / 1e9 / rate
        executor.spin_until(lambda: clock.now() >= due, max(due - clock.now(), 0.0) + 1.0)
        publishers[(record.topic, record.type_hash)].publish(record.payload)
    # let the last samples go out and be acknowledged
    executor.spin(0.2)
    logger.info(f"Played {len(records)} records at {rate}x in {clock.now() - start:.3f}s")
    return len(records)


def bag_info(records: list) -> pd.DataFrame:
    """Per-topic counts, byte totals and time span."""
    if not records:
        return pd.DataFrame(columns=["topic", "type", "count", "bytes", "first", "last"])
    frame = pd.DataFrame({
        "topic": [r.topic for r in records],
        "type": [type_name_for(r.type_hash) for r in records],
        "bytes": [len(r.payload) for r in records],
        "wall_ns": [r.recv_wall_ns for r in records],
    })
    summary = frame.groupby(["topic", "type"], as_index=False).agg(
        count=("bytes", "size"), bytes=("bytes", "sum"),
        first=("wall_ns", "min"), last=("wall_ns", "max"),
    )
    for column in ("first", "last"):
        summary[column] = summary[column].map(format_wall_ns)
    return summary


def bag_duration(records: list) -> float:
    if len(records) < 2:
        return 0.0
    return (records[-1].recv_mono_ns - records[0].recv_mono_ns) / 1e9


def format_wall_ns(ns: int) -> str:
    return datetime.fromtimestamp(ns / 1e9, tz=pytz.UTC).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
