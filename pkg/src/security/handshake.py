import hashlib
import hmac
import logging
import secrets
from dataclasses import dataclass, replace
from typing import Optional

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from src.interfaces.serialization import deserialize, serialize
from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor
from src.security.aead import KEY_SIZE, SALT_SIZE, SessionKeys
from src.security.identity import (
    Identity, IdentityCertificate, check_certificate, sign, verify_signature,
)
from src.security.permissions import PermissionsDocument, verify_permissions
from src.shared.errors import AuthenticationError, DecodeError, HandshakeError
from src.transport.packet import GUID_SIZE

logger = logging.getLogger(__name__)

AGREEMENT_SCHEMES = {"ecdh-p256": ec.SECP256R1}
KDF_INFO = b"minibus session v1"
KEY_CHECK_SIZE = 8

HANDSHAKE_TYPE = TypeDescriptor("minibus/Handshake", (
    ("handshake_id", K.UINT64),
    ("initiator_guid", ArrayType(K.UINT8, GUID_SIZE)),
    ("responder_guid", ArrayType(K.UINT8, GUID_SIZE)),
    ("certificate", ArrayType(K.UINT8)),
    ("permissions", ArrayType(K.UINT8)),
    ("ephemeral", ArrayType(K.UINT8)),
    ("key_check", ArrayType(K.UINT8)),
    ("signature", ArrayType(K.UINT8)),
))


@dataclass(frozen=True)
class HandshakeMessage:
    handshake_id: int
    initiator_guid: bytes
    responder_guid: bytes
    certificate: bytes
    permissions: bytes
    ephemeral: bytes
    key_check: bytes = b""
    signature: bytes = b""

    def _message(self, signature: bytes):
        return HANDSHAKE_TYPE.new(
            handshake_id=self.handshake_id, initiator_guid=self.initiator_guid,
            responder_guid=self.responder_guid, certificate=self.certificate,
            permissions=self.permissions, ephemeral=self.ephemeral,
            key_check=self.key_check, signature=signature,
        )

    def tbs_bytes(self) -> bytes:
        return serialize(self._message(b""))

    def to_bytes(self) -> bytes:
        return serialize(self._message(self.signature))

    @classmethod
    def from_bytes(cls, data: bytes) -> "HandshakeMessage":
        try:
            m = deserialize(data, HANDSHAKE_TYPE)
        except DecodeError as e:
            raise HandshakeError(f"Malformed handshake message: {e}") from None
        return cls(m.handshake_id, m.initiator_guid, m.responder_guid, m.certificate,
                   m.permissions, m.ephemeral, m.key_check, m.signature)


@dataclass(frozen=True)
class PeerCredentials:
    """What a verified handshake tells us about the other side."""

    certificate: IdentityCertificate
    permissions: Optional[PermissionsDocument]


def _ephemeral_bytes(key: ec.EllipticCurvePrivateKey) -> bytes:
    return key.public_key().public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint,
    )


def _curve(scheme: str):
    try:
        return AGREEMENT_SCHEMES[scheme]()
    except KeyError:
        raise HandshakeError(f"Unsupported agreement scheme: {scheme}") from None


def derive_session_keys(shared: bytes, handshake_id: int, initiator_guid: bytes,
                        responder_guid: bytes, is_initiator: bool) -> SessionKeys:
    """HKDF-SHA256 expands the agreed secret into one key and salt per
    direction plus a key check value both sides can compare."""
    salt = handshake_id.to_bytes(8, "little") + initiator_guid + responder_guid
    length = 2 * KEY_SIZE + 2 * SALT_SIZE + KEY_CHECK_SIZE
    okm = HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=KDF_INFO).derive(shared)
    k_i2r, k_r2i = okm[:KEY_SIZE], okm[KEY_SIZE:2 * KEY_SIZE]
    s_i2r = okm[2 * KEY_SIZE:2 * KEY_SIZE + SALT_SIZE]
    s_r2i = okm[2 * KEY_SIZE + SALT_SIZE:2 * KEY_SIZE + 2 * SALT_SIZE]
    check = okm[-KEY_CHECK_SIZE:]
    if is_initiator:
        return SessionKeys(k_i2r, k_r2i, s_i2r, s_r2i, check)
    return SessionKeys(k_r2i, k_i2r, s_r2i, s_i2r, check)


class HandshakeEndpoint:
    """One participant's side of the two-message handshake.

    The participant with the lower guid sends a request carrying its
    certificate, permissions and a signed ephemeral ECDH value; the other
    side verifies it and answers with its own signed values, binding the
    request bytes into its signature. Both derive the session keys.
    """

    def __init__(self, identity: Identity, permissions: Optional[PermissionsDocument],
                 anchor_public, local_guid: bytes, agreement_scheme: str = "ecdh-p256",
                 signature_scheme: Optional[str] = None):
        self.identity = identity
        self.permissions = permissions
        self.anchor_public = anchor_public
        self.local_guid = local_guid
        self.agreement_scheme = agreement_scheme
        self.signature_scheme = signature_scheme
        self._pending: dict = {}

    def _verify_peer(self, message: HandshakeMessage, now: float) -> PeerCredentials:
        try:
            cert = IdentityCertificate.from_bytes(message.certificate)
            check_certificate(cert, self.anchor_public, now, self.signature_scheme)
        except AuthenticationError as e:
            raise HandshakeError(f"Peer certificate rejected: {e}") from None
        permissions = None
        if message.permissions:
            try:
                permissions = PermissionsDocument.from_bytes(message.permissions)
            except AuthenticationError as e:
                raise HandshakeError(str(e)) from None
            if not verify_permissions(permissions, self.anchor_public):
                raise HandshakeError(f"Permissions of '{cert.subject}' are not signed by the trust anchor")
            if permissions.subject != cert.subject:
                raise HandshakeError("Permissions subject does not match certificate subject")
        return PeerCredentials(cert, permissions)

    def _shared(self, private: ec.EllipticCurvePrivateKey, peer_ephemeral: bytes) -> bytes:
        try:
            peer = ec.EllipticCurvePublicKey.from_encoded_point(_curve(self.agreement_scheme), peer_ephemeral)
        except ValueError:
            raise HandshakeError("Invalid ephemeral public value") from None
        return private.exchange(ec.ECDH(), peer)

    def _base(self, handshake_id: int, initiator: bytes, responder: bytes, ephemeral: bytes,
              key_check: bytes = b"") -> HandshakeMessage:
        return HandshakeMessage(
            handshake_id=handshake_id,
            initiator_guid=initiator,
            responder_guid=responder,
            certificate=self.identity.certificate.to_bytes(),
            permissions=self.permissions.to_bytes() if self.permissions else b"",
            ephemeral=ephemeral,
            key_check=key_check,
        )

    def initiate(self, remote_guid: bytes) -> bytes:
        """Request bytes for `remote_guid`; a newer call supersedes an older one."""
        private = ec.generate_private_key(_curve(self.agreement_scheme))
        handshake_id = secrets.randbits(64)
        request = self._base(handshake_id, self.local_guid, remote_guid, _ephemeral_bytes(private))
        request = replace(request, signature=sign(self.identity.private_key, request.tbs_bytes()))
        encoded = request.to_bytes()
        self._pending[remote_guid] = (handshake_id, private, encoded)
        return encoded

    def respond(self, request_bytes: bytes, now: float):
        """Verify a request; returns (reply bytes, SessionKeys, PeerCredentials)."""
        request = HandshakeMessage.from_bytes(request_bytes)
        if request.responder_guid != self.local_guid:
            raise HandshakeError("Handshake request addressed to another participant")
        peer = self._verify_peer(request, now)
        if not verify_signature(peer.certificate.public_key, request.signature, request.tbs_bytes()):
            raise HandshakeError(f"Request signature of '{peer.certificate.subject}' does not verify")

        private = ec.generate_private_key(_curve(self.agreement_scheme))
        shared = self._shared(private, request.ephemeral)
        keys = derive_session_keys(shared, request.handshake_id, request.initiator_guid,
                                   request.responder_guid, is_initiator=False)
        reply = self._base(request.handshake_id, request.initiator_guid, self.local_guid,
                           _ephemeral_bytes(private), key_check=keys.key_check)
        transcript = hashlib.sha256(request_bytes).digest() + reply.tbs_bytes()
        reply = replace(reply, signature=sign(self.identity.private_key, transcript))
        return reply.to_bytes(), keys, peer

    def complete(self, reply_bytes: bytes, now: float):
        """Verify a reply to our pending request; returns (remote guid,
        SessionKeys, PeerCredentials)."""
        reply = HandshakeMessage.from_bytes(reply_bytes)
        remote = reply.responder_guid
        pending = self._pending.get(remote)
        if pending is None or reply.initiator_guid != self.local_guid:
            raise HandshakeError("Reply does not answer a pending handshake")
        handshake_id, private, request_bytes = pending
        if reply.handshake_id != handshake_id:
            raise HandshakeError("Reply answers a superseded handshake")
        peer = self._verify_peer(reply, now)
        transcript = hashlib.sha256(request_bytes).digest() + reply.tbs_bytes()
        if not verify_signature(peer.certificate.public_key, reply.signature, transcript):
            raise HandshakeError(f"Reply signature of '{peer.certificate.subject}' does not verify")
        shared = self._shared(private, reply.ephemeral)
        keys = derive_session_keys(shared, handshake_id, self.local_guid, remote, is_initiator=True)
        if not hmac.compare_digest(keys.key_check, reply.key_check):
            raise HandshakeError("Key check value mismatch")
        del self._pending[remote]
        return remote, keys, peer

    def pending(self, remote_guid: bytes) -> bool:
        return remote_guid in self._pending

    def cancel(self, remote_guid: bytes) -> None:
        self._pending.pop(remote_guid, None)


def handshake(initiator: HandshakeEndpoint, responder: HandshakeEndpoint, now: float):
    """Run both messages in memory; returns (initiator keys, responder keys)."""
    request = initiator.initiate(responder.local_guid)
    reply, responder_keys, _ = responder.respond(request, now)
    _, initiator_keys, _ = initiator.complete(reply, now)
    return initiator_keys, responder_keys
