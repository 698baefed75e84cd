import logging
from dataclasses import dataclass, field
from typing import Optional

from src.shared.config import REASSEMBLY_TIMEOUT
from src.shared.errors import DecodeError
from src.transport.fragmentation import Reassembler
from src.transport.packet import (
    TIMESTAMP_STRUCT, ZERO_GUID, PacketHeader, PacketKind,
    encode_packet, pack_acknack, unpack_heartbeat,
)
from src.transport.qos import QosProfile

logger = logging.getLogger(__name__)

ACKNACK_WINDOW = 32


@dataclass(frozen=True)
class Sample:
    """One delivered message, still serialized."""

    writer_guid: bytes
    seq: int
    payload: bytes
    source_timestamp: float
    received_at: float


@dataclass
class WriterProxy:
    """Reader-side view of one matched writer."""

    writer_guid: bytes
    qos: QosProfile
    reliable: bool
    lifespan: Optional[float]
    next_expected: Optional[int] = None
    highest_delivered: int = 0
    buffer: dict = field(default_factory=dict)
    last_alive: float = 0.0


@dataclass
class ReaderOutput:
    messages: list = field(default_factory=list)
    datagrams: list = field(default_factory=list)
    lost: int = 0
    expired: int = 0

    def extend(self, other: "ReaderOutput") -> None:
        self.messages.extend(other.messages)
        self.datagrams.extend(other.datagrams)
        self.lost += other.lost
        self.expired += other.expired


class ReaderState:
    """Reassembly, ordering and acknowledgment for one reader.

    Reliable writer proxies stay uninitialized until the first HEARTBEAT
    tells them where the writer's stream starts; DATA arriving earlier is
    buffered.
    """

    def __init__(self, guid: bytes, topic_id: int, qos: QosProfile,
                 reassembly_timeout: float = REASSEMBLY_TIMEOUT):
        self.guid = guid
        self.topic_id = topic_id
        self.qos = qos
        self.writers: dict = {}
        self.reassembler = Reassembler(reassembly_timeout)
        self.last_delivery: Optional[float] = None
        self.total_lost = 0
        self.total_expired = 0

    def add_writer(self, writer_guid: bytes, writer_qos: QosProfile, now: float) -> None:
        lifespans = [v for v in (writer_qos.lifespan, self.qos.lifespan) if v is not None]
        self.writers[writer_guid] = WriterProxy(
            writer_guid=writer_guid,
            qos=writer_qos,
            reliable=writer_qos.reliable and self.qos.reliable,
            lifespan=min(lifespans) if lifespans else None,
            last_alive=now,
        )

    def remove_writer(self, writer_guid: bytes) -> None:
        if self.writers.pop(writer_guid, None) is not None:
            self.reassembler.discard_below(writer_guid, 2**64)

    def on_data(self, header: PacketHeader, payload: bytes, now: float) -> ReaderOutput:
        out = ReaderOutput()
        proxy = self.writers.get(header.writer_guid)
        if proxy is None:
            return out
        proxy.last_alive = now
        if proxy.reliable and proxy.next_expected is not None and header.seq < proxy.next_expected:
            return out
        if not proxy.reliable and header.seq <= proxy.highest_delivered:
            return out

        message = self.reassembler.add(
            (header.writer_guid, header.seq), header.frag_index, header.frag_count, payload, now,
        )
        if message is None:
            return out
        if len(message) < TIMESTAMP_STRUCT.size:
            raise DecodeError(f"DATA message shorter than timestamp prefix ({len(message)} bytes)")
        (stamp_ns,) = TIMESTAMP_STRUCT.unpack_from(message)
        body = message[TIMESTAMP_STRUCT.size:]

        if proxy.reliable:
            if header.seq in proxy.buffer:
                return out
            proxy.buffer[header.seq] = (body, stamp_ns / 1e9)
            if proxy.next_expected is not None:
                self._drain(proxy, now, out)
        else:
            proxy.highest_delivered = header.seq
            self._deliver(proxy, header.seq, body, stamp_ns / 1e9, now, out)
        return out

    def on_heartbeat(self, header: PacketHeader, payload: bytes, now: float) -> ReaderOutput:
        out = ReaderOutput()
        proxy = self.writers.get(header.writer_guid)
        if proxy is None:
            return out
        reader_guid, first, last = unpack_heartbeat(payload)
        proxy.last_alive = now
        if reader_guid not in (ZERO_GUID, self.guid) or not proxy.reliable:
            return out

        if proxy.next_expected is None:
            proxy.next_expected = first
            for seq in [s for s in proxy.buffer if s < first]:
                del proxy.buffer[seq]
        elif first > proxy.next_expected:
            self._skip_to(proxy, first, now, out)
        self._drain(proxy, now, out)
        out.datagrams.append(self._acknack(proxy, last))
        return out

    def _skip_to(self, proxy: WriterProxy, first: int, now: float, out: ReaderOutput) -> None:
        """Writer no longer holds seqs below `first`: deliver what was
        buffered there, count the rest as lost, and move on."""
        held = sorted(s for s in proxy.buffer if s < first)
        for seq in held:
            body, stamp = proxy.buffer.pop(seq)
            self._deliver(proxy, seq, body, stamp, now, out)
        lost = (first - proxy.next_expected) - len(held)
        if lost > 0:
            out.lost += lost
            self.total_lost += lost
            logger.debug(
                f"Writer {proxy.writer_guid.hex()} no longer holds "
                f"{lost} sample(s) below seq {first}"
            )
        proxy.next_expected = first
        self.reassembler.discard_below(proxy.writer_guid, first)

    def _drain(self, proxy: WriterProxy, now: float, out: ReaderOutput) -> None:
        while proxy.next_expected in proxy.buffer:
            body, stamp = proxy.buffer.pop(proxy.next_expected)
            self._deliver(proxy, proxy.next_expected, body, stamp, now, out)
            proxy.next_expected += 1

    def _deliver(self, proxy: WriterProxy, seq: int, body: bytes, stamp: float,
                 now: float, out: ReaderOutput) -> None:
        if proxy.lifespan is not None and now - stamp > proxy.lifespan:
            out.expired += 1
            self.total_expired += 1
            return
        out.messages.append(Sample(proxy.writer_guid, seq, body, stamp, now))
        self.last_delivery = now

    def _acknack(self, proxy: WriterProxy, last: int) -> bytes:
        base = proxy.next_expected
        bitmap = 0
        for i in range(ACKNACK_WINDOW):
            seq = base + i
            if seq > last:
                break
            if seq not in proxy.buffer:
                bitmap |= 1 << i
        return encode_packet(
            PacketHeader(PacketKind.ACKNACK, self.guid, self.topic_id, seq=base),
            pack_acknack(proxy.writer_guid, base, bitmap),
        )

    def expire(self, now: float) -> int:
        return self.reassembler.expire(now)


def reader_on_data(reader: ReaderState, header: PacketHeader, payload: bytes, now: float) -> ReaderOutput:
    return reader.on_data(header, payload, now)


def reader_on_heartbeat(reader: ReaderState, header: PacketHeader, payload: bytes, now: float) -> ReaderOutput:
    return reader.on_heartbeat(header, payload, now)
