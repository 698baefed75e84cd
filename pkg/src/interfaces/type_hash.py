import struct

from src.interfaces.types import ArrayType, PrimitiveKind, TypeDescriptor
from src.shared.errors import SchemaError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def _text(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def canonical_encoding(descriptor: TypeDescriptor) -> bytes:
    """Canonical bytes of (name, ordered field names, ordered field kinds).

    Layout: text(name) uint32(field_count) then per field text(field_name)
    text(kind_token); nested descriptors follow their "msg:<name>" token
    with their own canonical encoding. text(s) = uint32 length + UTF-8.
    """
    parts = [_text(descriptor.name), struct.pack("<I", len(descriptor.fields))]
    for fname, ftype in descriptor.fields:
        parts.append(_text(fname))
        if isinstance(ftype, TypeDescriptor):
            parts.append(_text(f"msg:{ftype.name}"))
            parts.append(canonical_encoding(ftype))
        elif isinstance(ftype, ArrayType):
            parts.append(_text(ftype.token))
        elif isinstance(ftype, PrimitiveKind):
            parts.append(_text(ftype.value))
        else:
            raise SchemaError(f"{descriptor.name}.{fname}: unsupported field type")
    return b"".join(parts)


def compute_type_hash(descriptor: TypeDescriptor) -> int:
    """64-bit FNV-1a hash of the descriptor's canonical encoding."""
    if not isinstance(descriptor, TypeDescriptor):
        raise SchemaError("compute_type_hash expects a TypeDescriptor")
    return fnv1a_64(canonical_encoding(descriptor))


def compute_topic_id(topic_name: str, type_hash: int) -> int:
    """Routing id placed in every packet header for a (topic, type) pair."""
    return fnv1a_64(_text(topic_name) + struct.pack("<Q", type_hash))
