import logging
import math
import struct
from enum import IntEnum
from typing import Callable, Optional

from src.shared.config import ANNOUNCE_PERIOD
from src.shared.errors import DecodeError
from src.transport.packet import PacketHeader, PacketKind, encode_packet

logger = logging.getLogger(__name__)


class DiscoverySubtype(IntEnum):
    ANNOUNCE = 0
    HANDSHAKE_REQUEST = 1
    HANDSHAKE_REPLY = 2


def encode_discovery(participant_guid: bytes, subtype: DiscoverySubtype, body: bytes, seq: int = 0) -> bytes:
    return encode_packet(
        PacketHeader(PacketKind.DISCOVERY, participant_guid, topic_id=0, seq=seq),
        struct.pack("<B", int(subtype)) + body,
    )


def split_discovery(payload: bytes):
    """Returns (subtype, body) of a DISCOVERY payload."""
    if not payload:
        raise DecodeError("Empty DISCOVERY payload")
    try:
        subtype = DiscoverySubtype(payload[0])
    except ValueError:
        raise DecodeError(f"Unknown discovery subtype {payload[0]}") from None
    return subtype, payload[1:]


class Announcer:
    """Decides when the participant announces itself and to whom.

    Announcements repeat every `period` and go out immediately after
    `mark_changed`. Destination None stands for the discovery channel;
    with static peers every listed peer and every participant heard from
    gets a unicast copy instead.
    """

    def __init__(self, period: float = ANNOUNCE_PERIOD, static_peers: Optional[list] = None):
        self.period = period
        self.static_peers = list(static_peers or [])
        self.last_sent = -math.inf
        self.changed = True
        self.sent_count = 0

    def mark_changed(self) -> None:
        self.changed = True

    def due(self, now: float) -> bool:
        return self.changed or now - self.last_sent >= self.period

    def announce_tick(self, now: float, build: Callable[[bool], bytes],
                      known_addresses: Optional[list] = None) -> list:
        """`build(changed)` returns the DISCOVERY datagram; it bumps the
        announcement seq when `changed` is true."""
        if not self.due(now):
            return []
        datagram = build(self.changed)
        self.changed = False
        self.last_sent = now
        self.sent_count += 1
        if not self.static_peers:
            return [(datagram, None)]
        targets = list(self.static_peers)
        for address in known_addresses or []:
            if address not in targets:
                targets.append(address)
        return [(datagram, address) for address in targets]


def announce_tick(announcer: Announcer, now: float, build: Callable[[bool], bytes],
                  known_addresses: Optional[list] = None) -> list:
    return announcer.announce_tick(now, build, known_addresses)
