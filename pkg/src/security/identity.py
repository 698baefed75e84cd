import logging
import time
from dataclasses import dataclass, replace
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec

from src.interfaces.serialization import deserialize, serialize
from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor
from src.shared.errors import AuthenticationError, DecodeError, SecurityError

logger = logging.getLogger(__name__)

DEFAULT_VALIDITY_DAYS = 365
DEFAULT_SIGNATURE_SCHEME = "ecdsa-p256"
# scheme name -> (curve, digest)
SIGNATURE_SCHEMES = {
    "ecdsa-p256": (ec.SECP256R1, hashes.SHA256),
    "ecdsa-p384": (ec.SECP384R1, hashes.SHA384),
}

CERTIFICATE_TYPE = TypeDescriptor("minibus/IdentityCertificate", (
    ("subject", K.STRING),
    ("public_key", ArrayType(K.UINT8)),
    ("not_before", K.FLOAT64),
    ("not_after", K.FLOAT64),
    ("issuer", K.STRING),
    ("signature", ArrayType(K.UINT8)),
))


def _curve(scheme: str):
    try:
        return SIGNATURE_SCHEMES[scheme][0]()
    except KeyError:
        raise SecurityError(f"Unsupported signature scheme: {scheme}") from None


def scheme_of(key) -> Optional[str]:
    """Signature scheme a private or public key belongs to, None if unsupported."""
    for name, (curve, _) in SIGNATURE_SCHEMES.items():
        if key.curve.name == curve.name:
            return name
    return None


def require_scheme(key, scheme: str, what: str) -> None:
    _curve(scheme)
    actual = scheme_of(key)
    if actual != scheme:
        raise AuthenticationError(f"{what} uses {actual or key.curve.name}, expected {scheme}")


def _digest(key):
    scheme = scheme_of(key)
    if scheme is None:
        raise AuthenticationError(f"Unsupported signing curve {key.curve.name}")
    return SIGNATURE_SCHEMES[scheme][1]()


def generate_private_key(scheme: str = DEFAULT_SIGNATURE_SCHEME) -> ec.EllipticCurvePrivateKey:
    return ec.generate_private_key(_curve(scheme))


def public_key_bytes(key) -> bytes:
    if isinstance(key, ec.EllipticCurvePrivateKey):
        key = key.public_key()
    return key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)


def load_public_key(data: bytes) -> ec.EllipticCurvePublicKey:
    try:
        key = serialization.load_der_public_key(data)
    except ValueError as e:
        raise AuthenticationError(f"Malformed public key: {e}") from None
    if not isinstance(key, ec.EllipticCurvePublicKey):
        raise AuthenticationError("Public key is not an elliptic-curve key")
    return key


def private_key_bytes(key: ec.EllipticCurvePrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.DER, serialization.PrivateFormat.PKCS8, serialization.NoEncryption(),
    )


def load_private_key(data: bytes) -> ec.EllipticCurvePrivateKey:
    key = serialization.load_der_private_key(data, password=None)
    if not isinstance(key, ec.EllipticCurvePrivateKey):
        raise SecurityError("Private key is not an elliptic-curve key")
    return key


def sign(private_key: ec.EllipticCurvePrivateKey, data: bytes) -> bytes:
    return private_key.sign(data, ec.ECDSA(_digest(private_key)))


def verify_signature(public_key, signature: bytes, data: bytes) -> bool:
    if isinstance(public_key, (bytes, bytearray)):
        try:
            public_key = load_public_key(bytes(public_key))
        except AuthenticationError:
            return False
    try:
        public_key.verify(signature, data, ec.ECDSA(_digest(public_key)))
        return True
    except (InvalidSignature, ValueError, AuthenticationError):
        return False


@dataclass(frozen=True)
class IdentityCertificate:
    subject: str
    public_key: bytes
    not_before: float
    not_after: float
    issuer: str
    signature: bytes = b""

    def _message(self, signature: bytes):
        return CERTIFICATE_TYPE.new(
            subject=self.subject, public_key=self.public_key,
            not_before=self.not_before, not_after=self.not_after,
            issuer=self.issuer, signature=signature,
        )

    def tbs_bytes(self) -> bytes:
        """Bytes the issuer signs: every field except the signature."""
        return serialize(self._message(b""))

    def to_bytes(self) -> bytes:
        return serialize(self._message(self.signature))

    @classmethod
    def from_bytes(cls, data: bytes) -> "IdentityCertificate":
        try:
            msg = deserialize(data, CERTIFICATE_TYPE)
        except DecodeError as e:
            raise AuthenticationError(f"Malformed certificate: {e}") from None
        return cls(msg.subject, msg.public_key, msg.not_before, msg.not_after, msg.issuer, msg.signature)

    def valid_at(self, now: float) -> bool:
        return self.not_before <= now <= self.not_after


@dataclass(frozen=True)
class TrustAnchor:
    """Root of trust for one deployment. `private_key` is None when only the
    public half is loaded."""

    name: str
    public_key: ec.EllipticCurvePublicKey
    private_key: Optional[ec.EllipticCurvePrivateKey] = None

    @property
    def public_bytes(self) -> bytes:
        return public_key_bytes(self.public_key)

    def public_only(self) -> "TrustAnchor":
        return replace(self, private_key=None)


@dataclass(frozen=True)
class Identity:
    subject: str
    private_key: ec.EllipticCurvePrivateKey
    certificate: IdentityCertificate


def create_trust_anchor(name: str = "minibus-anchor", scheme: str = DEFAULT_SIGNATURE_SCHEME) -> TrustAnchor:
    key = generate_private_key(scheme)
    return TrustAnchor(name=name, public_key=key.public_key(), private_key=key)


def generate_identity(anchor: TrustAnchor, subject: str, validity_days: float = DEFAULT_VALIDITY_DAYS,
                      now: Optional[float] = None, scheme: str = DEFAULT_SIGNATURE_SCHEME) -> Identity:
    """New keypair plus a certificate signed by the trust anchor."""
    if anchor.private_key is None:
        raise SecurityError("Trust anchor private key is required to issue certificates")
    if not subject:
        raise SecurityError("Certificate subject must be non-empty")
    now = time.time() if now is None else now
    key = generate_private_key(scheme)
    cert = IdentityCertificate(
        subject=subject,
        public_key=public_key_bytes(key),
        not_before=now,
        not_after=now + validity_days * 86400.0,
        issuer=anchor.name,
    )
    cert = replace(cert, signature=sign(anchor.private_key, cert.tbs_bytes()))
    logger.info(f"Issued certificate for '{subject}' valid for {validity_days} days")
    return Identity(subject=subject, private_key=key, certificate=cert)


def verify_certificate(cert: IdentityCertificate, anchor_public, now: Optional[float] = None) -> bool:
    """Issuer signature check; validity window too when `now` is given."""
    if not verify_signature(anchor_public, cert.signature, cert.tbs_bytes()):
        return False
    return now is None or cert.valid_at(now)


def check_certificate(cert: IdentityCertificate, anchor_public, now: float, scheme: Optional[str] = None) -> None:
    if scheme is not None:
        require_scheme(load_public_key(cert.public_key), scheme, f"Certificate of '{cert.subject}'")
    if not verify_signature(anchor_public, cert.signature, cert.tbs_bytes()):
        raise AuthenticationError(f"Certificate of '{cert.subject}' is not signed by the trust anchor")
    if not cert.valid_at(now):
        raise AuthenticationError(
            f"Certificate of '{cert.subject}' is outside its validity window "
            f"[{cert.not_before:.0f}, {cert.not_after:.0f}]"
        )
