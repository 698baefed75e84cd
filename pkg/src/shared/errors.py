class MiddlewareError(Exception):
    """Base class for every error raised by minibus."""


class SchemaError(MiddlewareError):
    """A type descriptor or message value does not satisfy its schema."""


class DecodeError(MiddlewareError):
    """Bytes could not be decoded (truncated, trailing data, bad lengths)."""


class ForeignPacketError(DecodeError):
    """Datagram does not carry the minibus magic or version."""


class ResourceExhaustedError(MiddlewareError):
    """A bounded resource (writer cache, nonce space) is used up."""


class ValidationError(MiddlewareError):
    """A name or argument is syntactically invalid."""


class NameConflictError(MiddlewareError):
    """A fully-qualified node name is already in use."""


class TransitionError(MiddlewareError):
    """A state machine was asked for a transition its table does not allow."""


class ParameterTypeError(MiddlewareError):
    """Parameter value kind differs from its declared type."""


class UnknownParameterError(MiddlewareError):
    """Parameter was never declared."""


class ParameterAccessError(MiddlewareError):
    """Parameter is read-only."""


class ServiceTimeoutError(MiddlewareError):
    """No response arrived before the call timeout."""


class ServiceCallError(MiddlewareError):
    """The server callback failed; carries the remote error text."""


class GoalRejectedError(MiddlewareError):
    """Action server declined the goal."""


class ServerLostError(MiddlewareError):
    """The remote server disappeared while work was outstanding."""


class SecurityError(MiddlewareError):
    """Base class for authentication, authorization and crypto failures."""


class AuthenticationError(SecurityError):
    """Signature, certificate or AEAD tag verification failed."""


class HandshakeError(SecurityError):
    """Session establishment was rejected."""


class AccessDeniedError(SecurityError):
    """Permissions document does not allow the requested endpoint."""


class RekeyRequiredError(SecurityError):
    """Nonce counter exhausted under the current session key."""


class ReplayError(SecurityError):
    """Sealed packet counter was already seen or fell behind the window."""


class KeystoreError(SecurityError):
    """Keystore file missing, malformed or already present."""


class BagFormatError(MiddlewareError):
    """Bag file is corrupt; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PartialResultError(MiddlewareError):
    """A benchmark run aborted; `partial` holds whatever was measured."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
