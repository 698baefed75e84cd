from src.security.context import SecurityContext
from src.security.identity import (
    Identity, IdentityCertificate, TrustAnchor, create_trust_anchor, generate_identity, verify_certificate,
)
from src.security.permissions import Direction, PermissionRule, PermissionsDocument, authorize, create_permissions

__all__ = [
    "SecurityContext", "Identity", "IdentityCertificate", "TrustAnchor", "create_trust_anchor",
    "generate_identity", "verify_certificate", "Direction", "PermissionRule", "PermissionsDocument",
    "authorize", "create_permissions",
]
