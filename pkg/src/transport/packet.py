import struct
from dataclasses import dataclass, replace
from enum import IntEnum

from src.shared.errors import DecodeError, ForeignPacketError

MAGIC = b"MBUS"
VERSION = 1

# magic, version, kind, flags, reserved, writer_guid, topic_id, seq,
# frag_index, frag_count, payload_len
HEADER_STRUCT = struct.Struct("<4sBBBB16sQQHHH")
HEADER_SIZE = HEADER_STRUCT.size  # 46
MAX_PAYLOAD = 0xFFFF

FLAG_ENCRYPTED = 0x01
FLAG_BEST_EFFORT = 0x02

GUID_SIZE = 16
GUID_PREFIX_SIZE = 12
ZERO_GUID = bytes(GUID_SIZE)


class PacketKind(IntEnum):
    DATA = 0
    ACKNACK = 1
    HEARTBEAT = 2
    DISCOVERY = 3


@dataclass(frozen=True)
class PacketHeader:
    """Fixed 46-byte header. For ACKNACK packets `writer_guid` carries the
    sending reader's guid; the target writer travels in the payload."""

    kind: PacketKind
    writer_guid: bytes
    topic_id: int
    seq: int = 0
    frag_index: int = 0
    frag_count: int = 1
    payload_len: int = 0
    flags: int = 0
    version: int = VERSION
    reserved: int = 0

    @property
    def encrypted(self) -> bool:
        return bool(self.flags & FLAG_ENCRYPTED)

    @property
    def best_effort(self) -> bool:
        return bool(self.flags & FLAG_BEST_EFFORT)

    @property
    def sender_prefix(self) -> bytes:
        """Participant prefix of the sending endpoint."""
        return self.writer_guid[:GUID_PREFIX_SIZE]

    def with_changes(self, **changes) -> "PacketHeader":
        return replace(self, **changes)

    def pack(self) -> bytes:
        if len(self.writer_guid) != GUID_SIZE:
            raise ValueError(f"writer_guid must be {GUID_SIZE} bytes")
        if not 0 <= self.frag_index < self.frag_count:
            raise ValueError(f"frag_index {self.frag_index} outside frag_count {self.frag_count}")
        if not 0 <= self.payload_len <= MAX_PAYLOAD:
            raise ValueError(f"payload_len {self.payload_len} out of range")
        return HEADER_STRUCT.pack(
            MAGIC, self.version, int(self.kind), self.flags, self.reserved,
            self.writer_guid, self.topic_id, self.seq,
            self.frag_index, self.frag_count, self.payload_len,
        )


def encode_packet(header: PacketHeader, payload: bytes = b"") -> bytes:
    """46-byte header followed by the payload; payload_len is set here."""
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"Payload of {len(payload)} bytes does not fit one datagram")
    if header.payload_len != len(payload):
        header = replace(header, payload_len=len(payload))
    return header.pack() + bytes(payload)


def decode_header(datagram: bytes) -> PacketHeader:
    if len(datagram) < 4 or datagram[:4] != MAGIC:
        raise ForeignPacketError("Bad magic")
    if len(datagram) < HEADER_SIZE:
        raise DecodeError(f"Datagram shorter than header ({len(datagram)} bytes)")
    (_, version, kind, flags, reserved, writer_guid, topic_id, seq,
     frag_index, frag_count, payload_len) = HEADER_STRUCT.unpack_from(datagram)
    if version != VERSION:
        raise ForeignPacketError(f"Unsupported version {version}")
    try:
        kind = PacketKind(kind)
    except ValueError:
        raise DecodeError(f"Unknown packet kind {kind}") from None
    if frag_count < 1 or frag_index >= frag_count:
        raise DecodeError(f"Bad fragment numbering {frag_index}/{frag_count}")
    return PacketHeader(
        kind=kind, writer_guid=bytes(writer_guid), topic_id=topic_id, seq=seq,
        frag_index=frag_index, frag_count=frag_count, payload_len=payload_len,
        flags=flags, version=version, reserved=reserved,
    )


def decode_packet(datagram: bytes):
    """Returns (header, payload). Rejects bad magic/version and length mismatch."""
    header = decode_header(datagram)
    payload = datagram[HEADER_SIZE:]
    if len(payload) != header.payload_len:
        raise DecodeError(
            f"payload_len {header.payload_len} does not match {len(payload)} trailing bytes"
        )
    return header, bytes(payload)


# Control payloads

HEARTBEAT_STRUCT = struct.Struct("<16sQQ")   # reader_guid (zero = all), first_seq, last_seq
ACKNACK_STRUCT = struct.Struct("<16sQI")     # writer_guid, base_seq, missing bitmap
TIMESTAMP_STRUCT = struct.Struct("<Q")       # source timestamp prefix of DATA messages


def pack_heartbeat(reader_guid: bytes, first_seq: int, last_seq: int) -> bytes:
    return HEARTBEAT_STRUCT.pack(reader_guid, first_seq, last_seq)


def unpack_heartbeat(payload: bytes):
    if len(payload) != HEARTBEAT_STRUCT.size:
        raise DecodeError(f"HEARTBEAT payload must be {HEARTBEAT_STRUCT.size} bytes")
    reader_guid, first_seq, last_seq = HEARTBEAT_STRUCT.unpack(payload)
    return bytes(reader_guid), first_seq, last_seq


def pack_acknack(writer_guid: bytes, base_seq: int, bitmap: int) -> bytes:
    return ACKNACK_STRUCT.pack(writer_guid, base_seq, bitmap)


def unpack_acknack(payload: bytes):
    if len(payload) != ACKNACK_STRUCT.size:
        raise DecodeError(f"ACKNACK payload must be {ACKNACK_STRUCT.size} bytes")
    writer_guid, base_seq, bitmap = ACKNACK_STRUCT.unpack(payload)
    return bytes(writer_guid), base_seq, bitmap
