import logging
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from src.shared.errors import AuthenticationError, DecodeError, RekeyRequiredError, ReplayError
from src.transport.packet import (
    FLAG_ENCRYPTED, HEADER_SIZE, PacketHeader, decode_packet, encode_packet,
)

logger = logging.getLogger(__name__)

KEY_SIZE = 32
SALT_SIZE = 4
TAG_SIZE = 16
COUNTER = struct.Struct("<Q")
MAX_COUNTER = 2**64 - 1


def _nonce(counter: int, salt: bytes) -> bytes:
    # 96-bit GCM nonce: 64-bit sender counter then 32-bit per-pair salt
    return COUNTER.pack(counter) + salt


def sealed_header(header: PacketHeader, plaintext_len: int) -> PacketHeader:
    """Header as it travels (and is authenticated) for a sealed payload."""
    return header.with_changes(
        flags=header.flags | FLAG_ENCRYPTED,
        payload_len=COUNTER.size + plaintext_len + TAG_SIZE,
    )


def seal(key: bytes, salt: bytes, counter: int, header: PacketHeader, payload: bytes) -> bytes:
    """AES-256-GCM over the payload with the sealed header as associated
    data. Returns counter || ciphertext || tag."""
    aad = sealed_header(header, len(payload)).pack()
    return COUNTER.pack(counter) + AESGCM(key).encrypt(_nonce(counter, salt), payload, aad)


def open_sealed(key: bytes, salt: bytes, header: PacketHeader, sealed: bytes):
    """Inverse of `seal` for a header with the encrypted flag set.

    Returns (counter, payload); any modification of header or body raises
    AuthenticationError.
    """
    if len(sealed) < COUNTER.size + TAG_SIZE:
        raise AuthenticationError("Sealed payload shorter than counter and tag")
    (counter,) = COUNTER.unpack_from(sealed)
    try:
        payload = AESGCM(key).decrypt(_nonce(counter, salt), sealed[COUNTER.size:], header.pack())
    except InvalidTag:
        raise AuthenticationError("AEAD tag mismatch") from None
    return counter, payload


class ReplayWindow:
    """Sliding 64-entry window over received counters."""

    def __init__(self, size: int = 64):
        self.size = size
        self.highest = -1
        self._mask = 0

    def check(self, counter: int) -> bool:
        if counter > self.highest:
            return True
        offset = self.highest - counter
        return offset < self.size and not (self._mask >> offset) & 1

    def accept(self, counter: int) -> None:
        if counter > self.highest:
            shift = counter - self.highest
            self._mask = ((self._mask << shift) | 1) & ((1 << self.size) - 1) if shift < self.size else 1
            self.highest = counter
        else:
            self._mask |= 1 << (self.highest - counter)


@dataclass
class SessionKeys:
    send_key: bytes
    recv_key: bytes
    send_salt: bytes
    recv_salt: bytes
    key_check: bytes


class PairSession:
    """Sealing state toward one remote participant."""

    def __init__(self, keys: SessionKeys, max_counter: int = MAX_COUNTER):
        self.keys = keys
        self.max_counter = max_counter
        self.send_counter = 0
        self.window = ReplayWindow()

    def seal_datagram(self, datagram: bytes) -> bytes:
        header, payload = decode_packet(datagram)
        if self.send_counter >= self.max_counter:
            raise RekeyRequiredError("Nonce counter exhausted for this session")
        self.send_counter += 1
        body = seal(self.keys.send_key, self.keys.send_salt, self.send_counter, header, payload)
        return encode_packet(sealed_header(header, len(payload)), body)

    def open_datagram(self, datagram: bytes) -> bytes:
        """Returns the plaintext datagram (encrypted flag cleared)."""
        try:
            header, body = decode_packet(datagram)
        except DecodeError as e:
            raise AuthenticationError(f"Malformed sealed datagram: {e}") from None
        if not header.encrypted:
            raise AuthenticationError("Datagram is not sealed")
        counter, payload = open_sealed(self.keys.recv_key, self.keys.recv_salt, header, body)
        if not self.window.check(counter):
            raise ReplayError(f"Counter {counter} replayed or too old")
        self.window.accept(counter)
        plain = header.with_changes(flags=header.flags & ~FLAG_ENCRYPTED)
        return encode_packet(plain, payload)
