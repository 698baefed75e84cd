import fnmatch
import logging
from dataclasses import dataclass, replace
from enum import IntEnum

from src.interfaces.serialization import deserialize, serialize
from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor
from src.security.identity import TrustAnchor, sign, verify_signature
from src.shared.errors import AuthenticationError, DecodeError, SecurityError

logger = logging.getLogger(__name__)


class Direction(IntEnum):
    PUB = 0
    SUB = 1


@dataclass(frozen=True)
class PermissionRule:
    direction: Direction
    pattern: str

    def __post_init__(self):
        if not self.pattern:
            raise SecurityError("Permission pattern must be non-empty")

    @classmethod
    def parse(cls, text: str) -> "PermissionRule":
        """'PUB:cmd_*' or 'SUB:/scan'."""
        direction, sep, pattern = text.partition(":")
        if not sep:
            raise SecurityError(f"Permission rule must look like PUB:<glob> or SUB:<glob>, got {text!r}")
        try:
            return cls(Direction[direction.strip().upper()], pattern.strip())
        except KeyError:
            raise SecurityError(f"Unknown permission direction {direction!r}") from None

    def __str__(self):
        return f"{self.direction.name}:{self.pattern}"


PERMISSIONS_TYPE = TypeDescriptor("minibus/PermissionsDocument", (
    ("subject", K.STRING),
    ("directions", ArrayType(K.UINT8)),
    ("patterns", ArrayType(K.STRING)),
    ("issuer", K.STRING),
    ("signature", ArrayType(K.UINT8)),
))


@dataclass(frozen=True)
class PermissionsDocument:
    """Deny-by-default allow list for one subject."""

    subject: str
    rules: tuple = ()
    issuer: str = ""
    signature: bytes = b""

    def _message(self, signature: bytes):
        return PERMISSIONS_TYPE.new(
            subject=self.subject,
            directions=bytes(int(r.direction) for r in self.rules),
            patterns=tuple(r.pattern for r in self.rules),
            issuer=self.issuer,
            signature=signature,
        )

    def tbs_bytes(self) -> bytes:
        return serialize(self._message(b""))

    def to_bytes(self) -> bytes:
        return serialize(self._message(self.signature))

    @classmethod
    def from_bytes(cls, data: bytes) -> "PermissionsDocument":
        try:
            msg = deserialize(data, PERMISSIONS_TYPE)
            if len(msg.directions) != len(msg.patterns):
                raise DecodeError("directions and patterns differ in length")
            rules = tuple(PermissionRule(Direction(d), p) for d, p in zip(msg.directions, msg.patterns))
        except (DecodeError, ValueError, SecurityError) as e:
            raise AuthenticationError(f"Malformed permissions document: {e}") from None
        return cls(msg.subject, rules, msg.issuer, msg.signature)


def create_permissions(anchor: TrustAnchor, subject: str, rules) -> PermissionsDocument:
    if anchor.private_key is None:
        raise SecurityError("Trust anchor private key is required to sign permissions")
    rules = tuple(r if isinstance(r, PermissionRule) else PermissionRule.parse(r) for r in rules)
    doc = PermissionsDocument(subject=subject, rules=rules, issuer=anchor.name)
    return replace(doc, signature=sign(anchor.private_key, doc.tbs_bytes()))


def verify_permissions(doc: PermissionsDocument, anchor_public) -> bool:
    return verify_signature(anchor_public, doc.signature, doc.tbs_bytes())


def _topic_matches(pattern: str, topic: str) -> bool:
    if fnmatch.fnmatchcase(topic, pattern):
        return True
    return fnmatch.fnmatchcase(topic.lstrip("/"), pattern.lstrip("/"))


def authorize(doc: PermissionsDocument, direction: Direction, topic: str) -> bool:
    """Allow iff some rule for `direction` has a glob matching `topic`.
    Leading slashes are not significant."""
    return any(rule.direction == direction and _topic_matches(rule.pattern, topic) for rule in doc.rules)
