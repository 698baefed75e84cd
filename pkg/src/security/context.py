import logging
import math
from typing import Optional

from src.discovery.endpoints import EndpointInfo, EndpointKind, ParticipantAnnouncement, signed_bytes
from src.security.aead import PairSession, SessionKeys
from src.security.handshake import HandshakeEndpoint, HandshakeMessage
from src.security.identity import (
    DEFAULT_SIGNATURE_SCHEME, Identity, IdentityCertificate, check_certificate, scheme_of, sign, verify_signature,
)
from src.security.keystore import Keystore
from src.security.permissions import Direction, PermissionsDocument, authorize, verify_permissions
from src.shared.errors import AccessDeniedError, AuthenticationError, KeystoreError
from src.transport.packet import GUID_PREFIX_SIZE, decode_header

logger = logging.getLogger(__name__)

HANDSHAKE_RETRY = 1.0

_DIRECTIONS = {EndpointKind.PUBLISHER: Direction.PUB, EndpointKind.SUBSCRIPTION: Direction.SUB}


class SecurityContext:
    """Per-participant security state: identity, trust anchor, verified
    peer permissions and one sealing session per remote participant."""

    def __init__(self, identity: Identity, anchor_public, permissions: Optional[PermissionsDocument],
                 agreement_scheme: str = "ecdh-p256", max_counter: Optional[int] = None,
                 signature_scheme: Optional[str] = None):
        self.identity = identity
        self.anchor_public = anchor_public
        self.permissions = permissions
        self.agreement_scheme = agreement_scheme
        self.signature_scheme = signature_scheme or scheme_of(identity.private_key)
        self.max_counter = max_counter
        self.local_guid: Optional[bytes] = None
        self._handshake: Optional[HandshakeEndpoint] = None
        self.sessions: dict = {}
        self._remote_permissions: dict = {}
        self._verified_certs: dict = {}
        self._last_attempt: dict = {}

    @classmethod
    def from_keystore(cls, keystore_path: str, subject: str, agreement_scheme: str = "ecdh-p256",
                      signature_scheme: str = DEFAULT_SIGNATURE_SCHEME) -> "SecurityContext":
        keystore = Keystore(keystore_path, signature_scheme)
        if not subject:
            raise KeystoreError("Security is enabled but no identity subject is configured")
        anchor = keystore.load_anchor()
        identity = keystore.load_identity(subject)
        permissions = keystore.load_permissions(subject)
        if permissions is None:
            logger.warning(f"No permissions document for '{subject}': every endpoint will be denied")
        return cls(identity, anchor.public_key, permissions, agreement_scheme, signature_scheme=signature_scheme)

    def bind(self, local_guid: bytes) -> None:
        self.local_guid = local_guid
        self._handshake = HandshakeEndpoint(
            self.identity, self.permissions, self.anchor_public, local_guid, self.agreement_scheme,
            self.signature_scheme,
        )

    # --- Access control ---

    def allows(self, direction: EndpointKind, topic: str) -> bool:
        wanted = _DIRECTIONS.get(direction)
        if wanted is None:
            return True
        return self.permissions is not None and authorize(self.permissions, wanted, topic)

    def check_local(self, direction: EndpointKind, topic: str) -> None:
        if not self.allows(direction, topic):
            raise AccessDeniedError(
                f"'{self.identity.subject}' may not {_DIRECTIONS[direction].name} on {topic}"
            )

    def authorizer(self, participant_guid: bytes, ann: ParticipantAnnouncement, endpoint: EndpointInfo) -> bool:
        wanted = _DIRECTIONS.get(endpoint.direction)
        if wanted is None:
            return True
        doc = self._remote_permissions.get(participant_guid)
        return doc is not None and authorize(doc, wanted, endpoint.topic_name)

    # --- Announcements ---

    def sign_announcement(self, ann: ParticipantAnnouncement) -> ParticipantAnnouncement:
        ann = ann.with_changes(
            certificate=self.identity.certificate.to_bytes(),
            permissions=self.permissions.to_bytes() if self.permissions else b"",
            signature=b"",
        )
        return ann.with_changes(signature=sign(self.identity.private_key, signed_bytes(ann)))

    def verify_announcement(self, ann: ParticipantAnnouncement, now: float) -> None:
        """Raises AuthenticationError unless the announcement is signed by a
        certificate the trust anchor issued and that is currently valid."""
        if not ann.secured:
            raise AuthenticationError("Unsigned announcement")
        cert = self._verified_certs.get(ann.certificate)
        if cert is None:
            cert = IdentityCertificate.from_bytes(ann.certificate)
            check_certificate(cert, self.anchor_public, now, self.signature_scheme)
            self._verified_certs[ann.certificate] = cert
        elif not cert.valid_at(now):
            raise AuthenticationError(f"Certificate of '{cert.subject}' expired")
        if not verify_signature(cert.public_key, ann.signature, signed_bytes(ann)):
            raise AuthenticationError(f"Announcement signature of '{cert.subject}' does not verify")
        doc = None
        if ann.permissions:
            doc = PermissionsDocument.from_bytes(ann.permissions)
            if not verify_permissions(doc, self.anchor_public) or doc.subject != cert.subject:
                raise AuthenticationError(f"Permissions presented by '{cert.subject}' are not valid")
        self._remote_permissions[ann.participant_guid] = doc

    # --- Handshake ---

    def initiates_with(self, remote_guid: bytes) -> bool:
        return self.local_guid < remote_guid

    def has_session(self, remote_guid: bytes) -> bool:
        return remote_guid[:GUID_PREFIX_SIZE] in self.sessions

    def handshake_request(self, remote_guid: bytes, now: float) -> Optional[bytes]:
        """Request bytes when this side should (re)try a handshake now."""
        if self.has_session(remote_guid) or not self.initiates_with(remote_guid):
            return None
        if now - self._last_attempt.get(remote_guid, -math.inf) < HANDSHAKE_RETRY:
            return None
        self._last_attempt[remote_guid] = now
        logger.debug(f"Handshake request to {remote_guid.hex()}")
        return self._handshake.initiate(remote_guid)

    def on_handshake_request(self, body: bytes, now: float):
        """Returns (reply bytes, remote guid); raises HandshakeError."""
        reply, keys, peer = self._handshake.respond(body, now)
        remote = HandshakeMessage.from_bytes(body).initiator_guid
        self._install(remote, keys, peer.certificate.subject)
        return reply, remote

    def on_handshake_reply(self, body: bytes, now: float) -> bytes:
        remote, keys, peer = self._handshake.complete(body, now)
        self._install(remote, keys, peer.certificate.subject)
        return remote

    def _install(self, remote_guid: bytes, keys: SessionKeys, subject: str) -> None:
        session = PairSession(keys) if self.max_counter is None else PairSession(keys, self.max_counter)
        self.sessions[remote_guid[:GUID_PREFIX_SIZE]] = session
        self._last_attempt.pop(remote_guid, None)
        logger.info(f"Secure session established with '{subject}' ({remote_guid.hex()})")

    def forget(self, remote_guid: bytes) -> None:
        self.sessions.pop(remote_guid[:GUID_PREFIX_SIZE], None)
        self._remote_permissions.pop(remote_guid, None)
        self._last_attempt.pop(remote_guid, None)
        if self._handshake is not None:
            self._handshake.cancel(remote_guid)

    # --- Sealing ---

    def seal(self, datagram: bytes, remote_guid: bytes) -> Optional[bytes]:
        session = self.sessions.get(remote_guid[:GUID_PREFIX_SIZE])
        if session is None:
            return None
        return session.seal_datagram(datagram)

    def open(self, datagram: bytes) -> bytes:
        """Raises AuthenticationError (or ReplayError) for anything that is
        not a fresh datagram sealed by a peer with an established session."""
        header = decode_header(datagram)
        session = self.sessions.get(header.sender_prefix)
        if session is None:
            raise AuthenticationError(f"No session with sender {header.sender_prefix.hex()}")
        return session.open_datagram(datagram)
