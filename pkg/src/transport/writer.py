import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

from src.shared.config import FRAGMENT_SIZE, HEARTBEAT_PERIOD, KEEP_ALL_HIGH_WATER
from src.shared.errors import ResourceExhaustedError
from src.transport.fragmentation import fragment
from src.transport.packet import (
    FLAG_BEST_EFFORT, TIMESTAMP_STRUCT, ZERO_GUID, PacketHeader, PacketKind,
    encode_packet, pack_heartbeat,
)
from src.transport.qos import QosProfile

logger = logging.getLogger(__name__)


@dataclass
class CacheEntry:
    seq: int
    source_timestamp: float
    datagrams: list
    size: int


@dataclass
class ReaderProxy:
    """Writer-side view of one matched reader."""

    reader_guid: bytes
    reliable: bool
    transient_local: bool
    start_seq: int
    acked_upto: int
    synchronized: bool = False


@dataclass
class WriterState:
    """Sequence numbering, history cache and per-reader acknowledgment state
    of one writer. Pure state machine: returns datagrams, never sends."""

    guid: bytes
    topic_id: int
    qos: QosProfile
    fragment_size: int = FRAGMENT_SIZE
    high_water: int = KEEP_ALL_HIGH_WATER
    heartbeat_period: float = HEARTBEAT_PERIOD
    next_seq: int = 1
    cache: OrderedDict = field(default_factory=OrderedDict)
    readers: dict = field(default_factory=dict)
    cached_bytes: int = 0
    last_heartbeat: float = -math.inf
    evicted_unacked: int = 0

    @property
    def acked(self) -> dict:
        """reader_guid -> highest contiguous acknowledged seq."""
        return {g: p.acked_upto for g, p in self.readers.items() if p.reliable}

    @property
    def last_seq(self) -> int:
        return self.next_seq - 1

    @property
    def first_cached_seq(self) -> int:
        return next(iter(self.cache)) if self.cache else self.next_seq

    # --- Matching ---

    def add_reader(self, reader_guid: bytes, reader_qos: QosProfile, now: float) -> list:
        """Register a matched reader. Returns datagrams to send it right away:
        an initial HEARTBEAT for reliable readers, or the retained history
        once for best-effort transient-local readers."""
        transient = self.qos.transient_local and reader_qos.transient_local
        start = self.first_cached_seq if transient else self.next_seq
        proxy = ReaderProxy(
            reader_guid=reader_guid,
            reliable=self.qos.reliable and reader_qos.reliable,
            transient_local=transient,
            start_seq=start,
            acked_upto=start - 1,
        )
        self.readers[reader_guid] = proxy
        if proxy.reliable:
            return [self._heartbeat_for(proxy)]
        if transient:
            return [d for entry in self.cache.values() if entry.seq >= start for d in entry.datagrams]
        return []

    def remove_reader(self, reader_guid: bytes) -> None:
        if self.readers.pop(reader_guid, None) is not None:
            self._prune()

    # --- Publishing ---

    def publish(self, payload: bytes, now: float, source_timestamp: Optional[float] = None) -> list:
        """Assign the next seq, fragment, and retain per QoS.

        Returns the datagrams to emit once to every matched reader.
        """
        stamp = now if source_timestamp is None else source_timestamp
        message = TIMESTAMP_STRUCT.pack(int(stamp * 1e9)) + payload
        if self.qos.keep_all and self._retains_anything() and \
                self.cached_bytes + len(message) > self.high_water:
            raise ResourceExhaustedError(
                f"Writer cache would exceed {self.high_water} bytes "
                f"({self.cached_bytes} cached, KEEP_ALL)"
            )
        seq = self.next_seq
        self.next_seq += 1
        datagrams = self._build_datagrams(seq, message)

        if self._retains_anything():
            self.cache[seq] = CacheEntry(seq, stamp, datagrams, len(message))
            self.cached_bytes += len(message)
            if not self.qos.keep_all:
                while len(self.cache) > self.qos.depth:
                    _, evicted = self.cache.popitem(last=False)
                    self.cached_bytes -= evicted.size
                    if any(p.reliable and p.acked_upto < evicted.seq for p in self.readers.values()):
                        self.evicted_unacked += 1
                        logger.debug(f"Evicted unacked seq {evicted.seq} (KEEP_LAST {self.qos.depth})")
        return datagrams

    def _retains_anything(self) -> bool:
        return self.qos.transient_local or any(p.reliable for p in self.readers.values())

    def _build_datagrams(self, seq: int, message: bytes) -> list:
        pieces = fragment(message, self.fragment_size)
        flags = 0 if self.qos.reliable else FLAG_BEST_EFFORT
        count = len(pieces)
        if count > 0xFFFF:
            raise ResourceExhaustedError(
                f"Message of {len(message)} bytes needs {count} fragments (max 65535)"
            )
        return [
            encode_packet(
                PacketHeader(PacketKind.DATA, self.guid, self.topic_id, seq=seq,
                             frag_index=i, frag_count=count, flags=flags),
                piece,
            )
            for i, piece in enumerate(pieces)
        ]

    # --- Reliability ---

    def on_acknack(self, reader_guid: bytes, base_seq: int, bitmap: int, now: float) -> list:
        """Advance the reader's ack watermark to base_seq-1 and resend each
        seq base_seq+i whose bit i is set. Seqs that are no longer cached
        are answered with a heartbeat whose first_seq skips them (GAP)."""
        proxy = self.readers.get(reader_guid)
        if proxy is None or not proxy.reliable:
            logger.debug(f"Ignoring ACKNACK from unknown reader {reader_guid.hex()}")
            return []
        proxy.synchronized = True
        proxy.acked_upto = max(proxy.acked_upto, base_seq - 1)

        out = []
        gap = False
        for i in range(32):
            if not (bitmap >> i) & 1:
                continue
            seq = base_seq + i
            if seq >= self.next_seq:
                break
            entry = self.cache.get(seq)
            if seq < proxy.start_seq or entry is None:
                gap = True
            else:
                out.extend(entry.datagrams)
        if gap:
            out.append(self._heartbeat_for(proxy))
        self._prune()
        return out

    def heartbeat_tick(self, now: float) -> list:
        """At most once per heartbeat period, one HEARTBEAT per reliable
        reader that has not acknowledged everything (or never answered)."""
        if not self.qos.reliable or now - self.last_heartbeat < self.heartbeat_period:
            return []
        out = [
            self._heartbeat_for(proxy)
            for proxy in self.readers.values()
            if proxy.reliable and (not proxy.synchronized or proxy.acked_upto < self.last_seq)
        ]
        if out:
            self.last_heartbeat = now
        return out

    def liveliness_heartbeat(self) -> bytes:
        """HEARTBEAT addressed to every reader; asserts liveliness."""
        first = self.first_cached_seq
        return self._encode_heartbeat(ZERO_GUID, first, self.last_seq)

    def history_datagrams(self, start_seq: int) -> list:
        return [d for entry in self.cache.values() if entry.seq >= start_seq for d in entry.datagrams]

    def has_unacked(self) -> bool:
        return any(p.reliable and p.acked_upto < self.last_seq for p in self.readers.values())

    def _heartbeat_for(self, proxy: ReaderProxy) -> bytes:
        first = max(self.first_cached_seq, proxy.start_seq)
        return self._encode_heartbeat(proxy.reader_guid, first, self.last_seq)

    def _encode_heartbeat(self, reader_guid: bytes, first: int, last: int) -> bytes:
        return encode_packet(
            PacketHeader(PacketKind.HEARTBEAT, self.guid, self.topic_id, seq=last),
            pack_heartbeat(reader_guid, first, last),
        )

    def _prune(self) -> None:
        """Volatile writers drop samples every reliable reader has acked."""
        if self.qos.transient_local:
            return
        reliable = [p.acked_upto for p in self.readers.values() if p.reliable]
        floor = min(reliable) if reliable else self.last_seq
        while self.cache:
            seq, entry = next(iter(self.cache.items()))
            if seq > floor:
                break
            self.cache.popitem(last=False)
            self.cached_bytes -= entry.size


def writer_publish(writer: WriterState, payload: bytes, now: float) -> list:
    return writer.publish(payload, now)


def writer_on_acknack(writer: WriterState, reader_guid: bytes, base_seq: int,
                      missing_bitmap: int, now: float = 0.0) -> list:
    return writer.on_acknack(reader_guid, base_seq, missing_bitmap, now)


def writer_heartbeat_tick(writer: WriterState, now: float) -> list:
    return writer.heartbeat_tick(now)
