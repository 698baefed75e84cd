"""Keystore directory and the MKEY container format.

Layout under the keystore root:

    anchor/anchor.pub            trust anchor public key (ANCHOR_PUBLIC)
    anchor/anchor.key            trust anchor private key (ANCHOR_PRIVATE)
    identities/<subject>/cert.mkey         IdentityCertificate (CERTIFICATE)
    identities/<subject>/key.mkey          identity private key (PRIVATE_KEY)
    identities/<subject>/permissions.mkey  PermissionsDocument (PERMISSIONS)

Every file is one container: magic "MKEY", uint8 version (1), uint8 kind,
uint32 little-endian body length, body. Keys are DER (SubjectPublicKeyInfo
or PKCS#8); certificates and permissions use the interfaces encoding. The
anchor name travels in the ANCHOR_PUBLIC body as a uint32-prefixed UTF-8
string ahead of the key.
"""
import logging
import os
import struct
from enum import IntEnum
from pathlib import Path
from typing import Optional

from src.security.identity import (
    DEFAULT_SIGNATURE_SCHEME, Identity, IdentityCertificate, TrustAnchor, create_trust_anchor,
    generate_identity, load_private_key, load_public_key, private_key_bytes, public_key_bytes, scheme_of,
)
from src.security.permissions import PermissionsDocument
from src.shared.errors import KeystoreError, SecurityError

logger = logging.getLogger(__name__)

MAGIC = b"MKEY"
VERSION = 1
CONTAINER_HEADER = struct.Struct("<4sBBI")


class ContainerKind(IntEnum):
    ANCHOR_PUBLIC = 1
    ANCHOR_PRIVATE = 2
    CERTIFICATE = 3
    PRIVATE_KEY = 4
    PERMISSIONS = 5


def pack_container(kind: ContainerKind, body: bytes) -> bytes:
    return CONTAINER_HEADER.pack(MAGIC, VERSION, int(kind), len(body)) + body


def unpack_container(data: bytes, expected: ContainerKind) -> bytes:
    if len(data) < CONTAINER_HEADER.size:
        raise KeystoreError("Container shorter than its header")
    magic, version, kind, length = CONTAINER_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise KeystoreError("Not an MKEY container")
    if version != VERSION:
        raise KeystoreError(f"Unsupported MKEY version {version}")
    if kind != expected:
        raise KeystoreError(f"Expected {expected.name} container, found kind {kind}")
    body = data[CONTAINER_HEADER.size:]
    if len(body) != length:
        raise KeystoreError(f"Container declares {length} body bytes, holds {len(body)}")
    return body


def _pack_named_key(name: str, key_der: bytes) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + key_der


def _unpack_named_key(body: bytes):
    if len(body) < 4:
        raise KeystoreError("Anchor container truncated")
    (n,) = struct.unpack_from("<I", body)
    if 4 + n > len(body):
        raise KeystoreError("Anchor name overruns container")
    return body[4:4 + n].decode("utf-8"), body[4 + n:]


class Keystore:
    """Every key in one keystore belongs to `signature_scheme`; keys of any
    other scheme are refused on load."""

    def __init__(self, root, signature_scheme: str = DEFAULT_SIGNATURE_SCHEME):
        self.root = Path(root)
        self.signature_scheme = signature_scheme

    @property
    def anchor_dir(self) -> Path:
        return self.root / "anchor"

    def identity_dir(self, subject: str) -> Path:
        if not subject or "/" in subject or subject.startswith("."):
            raise KeystoreError(f"Invalid subject name {subject!r}")
        return self.root / "identities" / subject

    def _write(self, path: Path, kind: ContainerKind, body: bytes, private: bool = False) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(pack_container(kind, body))
        if private:
            os.chmod(path, 0o600)

    def _read(self, path: Path, kind: ContainerKind) -> bytes:
        if not path.exists():
            raise KeystoreError(f"Missing keystore file {path}")
        return unpack_container(path.read_bytes(), kind)

    def _check_scheme(self, key, what: str):
        actual = scheme_of(key)
        if actual != self.signature_scheme:
            raise KeystoreError(f"{what} uses {actual or key.curve.name} but the keystore expects "
                                f"{self.signature_scheme}")
        return key

    # --- Trust anchor ---

    def create_anchor(self, name: str = "minibus-anchor", overwrite: bool = False) -> TrustAnchor:
        if (self.anchor_dir / "anchor.pub").exists() and not overwrite:
            raise KeystoreError(f"Trust anchor already exists in {self.anchor_dir}")
        try:
            anchor = create_trust_anchor(name, self.signature_scheme)
        except SecurityError as e:
            raise KeystoreError(str(e)) from None
        self._write(self.anchor_dir / "anchor.pub", ContainerKind.ANCHOR_PUBLIC,
                    _pack_named_key(name, anchor.public_bytes))
        self._write(self.anchor_dir / "anchor.key", ContainerKind.ANCHOR_PRIVATE,
                    _pack_named_key(name, private_key_bytes(anchor.private_key)), private=True)
        logger.info(f"Created trust anchor '{name}' in {self.anchor_dir}")
        return anchor

    def load_anchor(self, with_private: bool = False) -> TrustAnchor:
        name, public_der = _unpack_named_key(self._read(self.anchor_dir / "anchor.pub", ContainerKind.ANCHOR_PUBLIC))
        private = None
        if with_private:
            _, private_der = _unpack_named_key(
                self._read(self.anchor_dir / "anchor.key", ContainerKind.ANCHOR_PRIVATE)
            )
            private = load_private_key(private_der)
        public = self._check_scheme(load_public_key(public_der), f"Trust anchor '{name}'")
        return TrustAnchor(name=name, public_key=public, private_key=private)

    # --- Identities ---

    def issue_identity(self, subject: str, validity_days: float, overwrite: bool = False) -> Identity:
        """Generate, sign with the stored anchor, and store a new identity."""
        identity = generate_identity(self.load_anchor(with_private=True), subject, validity_days,
                                     scheme=self.signature_scheme)
        self.store_identity(identity, overwrite=overwrite)
        return identity

    def has_identity(self, subject: str) -> bool:
        return (self.identity_dir(subject) / "cert.mkey").exists()

    def store_identity(self, identity: Identity, overwrite: bool = False) -> Path:
        folder = self.identity_dir(identity.subject)
        if self.has_identity(identity.subject) and not overwrite:
            raise KeystoreError(f"Identity '{identity.subject}' already exists (use overwrite)")
        self._write(folder / "cert.mkey", ContainerKind.CERTIFICATE, identity.certificate.to_bytes())
        self._write(folder / "key.mkey", ContainerKind.PRIVATE_KEY,
                    private_key_bytes(identity.private_key), private=True)
        return folder

    def load_identity(self, subject: str) -> Identity:
        folder = self.identity_dir(subject)
        cert = IdentityCertificate.from_bytes(self._read(folder / "cert.mkey", ContainerKind.CERTIFICATE))
        key = self._check_scheme(load_private_key(self._read(folder / "key.mkey", ContainerKind.PRIVATE_KEY)),
                                 f"Identity '{subject}'")
        if public_key_bytes(key) != cert.public_key:
            raise KeystoreError(f"Private key of '{subject}' does not match its certificate")
        return Identity(subject=subject, private_key=key, certificate=cert)

    def store_permissions(self, doc: PermissionsDocument) -> Path:
        path = self.identity_dir(doc.subject) / "permissions.mkey"
        self._write(path, ContainerKind.PERMISSIONS, doc.to_bytes())
        return path

    def load_permissions(self, subject: str) -> Optional[PermissionsDocument]:
        path = self.identity_dir(subject) / "permissions.mkey"
        if not path.exists():
            return None
        return PermissionsDocument.from_bytes(self._read(path, ContainerKind.PERMISSIONS))

    def subjects(self) -> list:
        base = self.root / "identities"
        if not base.exists():
            return []
        return sorted(p.name for p in base.iterdir() if (p / "cert.mkey").exists())
