import logging
import struct

from src.interfaces.types import (
    ArrayType, MessageValue, PrimitiveKind, TypeDescriptor, check_value,
)
from src.shared.errors import DecodeError, SchemaError

logger = logging.getLogger(__name__)

_U32 = struct.Struct("<I")


def serialize(message: MessageValue) -> bytes:
    """Encode fields in declaration order: little-endian, unpadded,
    uint32 length prefix for strings and arrays."""
    if not isinstance(message, MessageValue):
        raise SchemaError(f"serialize expects a MessageValue, got {type(message).__name__}")
    out = bytearray()
    _encode_message(message.descriptor, message.values, out)
    return bytes(out)


def _encode_message(descriptor: TypeDescriptor, values, out: bytearray) -> None:
    for name, ftype in descriptor.fields:
        value = values[name]
        if isinstance(ftype, TypeDescriptor):
            if not isinstance(value, MessageValue) or value.descriptor.type_hash != ftype.type_hash:
                raise SchemaError(f"{descriptor.name}.{name}: nested value does not match {ftype.name}")
            _encode_message(ftype, value.values, out)
        elif isinstance(ftype, ArrayType):
            _encode_array(ftype, value, out)
        else:
            _encode_primitive(ftype, value, out)


def _encode_primitive(kind: PrimitiveKind, value, out: bytearray) -> None:
    if kind == PrimitiveKind.STRING:
        raw = value.encode("utf-8")
        out += _U32.pack(len(raw))
        out += raw
        return
    try:
        out += struct.pack("<" + kind.struct_code, value)
    except struct.error as e:
        raise SchemaError(f"Cannot encode {value!r} as {kind.value}: {e}") from None


def _encode_array(ftype: ArrayType, value, out: bytearray) -> None:
    out += _U32.pack(len(value))
    kind = ftype.element
    if kind == PrimitiveKind.UINT8:
        out += value
    elif kind == PrimitiveKind.STRING:
        for item in value:
            _encode_primitive(kind, item, out)
    elif value:
        try:
            out += struct.pack(f"<{len(value)}{kind.struct_code}", *value)
        except struct.error as e:
            raise SchemaError(f"Cannot encode array of {kind.value}: {e}") from None


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError(
                f"Truncated input: need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def deserialize(data: bytes, descriptor: TypeDescriptor) -> MessageValue:
    """Inverse of serialize; consumes exactly the encoded length."""
    reader = _Reader(bytes(data) if not isinstance(data, (bytes, bytearray)) else data)
    values = _decode_message(descriptor, reader)
    if reader.pos != len(reader.data):
        raise DecodeError(
            f"{len(reader.data) - reader.pos} trailing bytes after {descriptor.name}"
        )
    try:
        return MessageValue(descriptor, values)
    except SchemaError as e:
        raise DecodeError(f"Decoded value violates schema: {e}") from None


def _decode_message(descriptor: TypeDescriptor, reader: _Reader) -> dict:
    values = {}
    for name, ftype in descriptor.fields:
        if isinstance(ftype, TypeDescriptor):
            nested = _decode_message(ftype, reader)
            values[name] = MessageValue(ftype, nested)
        elif isinstance(ftype, ArrayType):
            values[name] = _decode_array(ftype, reader, f"{descriptor.name}.{name}")
        else:
            values[name] = _decode_primitive(ftype, reader, f"{descriptor.name}.{name}")
    return values


def _decode_primitive(kind: PrimitiveKind, reader: _Reader, where: str):
    if kind == PrimitiveKind.STRING:
        length = reader.u32()
        raw = reader.take(length)
        try:
            return str(raw, "utf-8")
        except UnicodeDecodeError:
            raise DecodeError(f"{where}: invalid UTF-8") from None
    raw = reader.take(kind.width)
    if kind == PrimitiveKind.BOOL and raw[0] > 1:
        raise DecodeError(f"{where}: invalid bool byte {raw[0]}")
    return struct.unpack("<" + kind.struct_code, raw)[0]


def _decode_array(ftype: ArrayType, reader: _Reader, where: str):
    count = reader.u32()
    if ftype.length is not None:
        if ftype.bounded and count > ftype.length:
            raise DecodeError(f"{where}: {count} elements exceeds bound {ftype.length}")
        if not ftype.bounded and count != ftype.length:
            raise DecodeError(f"{where}: expected {ftype.length} elements, got {count}")
    kind = ftype.element
    if kind == PrimitiveKind.UINT8:
        return bytes(reader.take(count))
    if kind == PrimitiveKind.STRING:
        return tuple(_decode_primitive(kind, reader, f"{where}[{i}]") for i in range(count))
    raw = reader.take(count * kind.width)
    if kind == PrimitiveKind.BOOL and any(b > 1 for b in raw):
        raise DecodeError(f"{where}: invalid bool byte")
    return struct.unpack(f"<{count}{kind.struct_code}", raw)


def coerce_message(descriptor: TypeDescriptor, message) -> MessageValue:
    """Accept a MessageValue or a plain dict for `descriptor`."""
    if isinstance(message, MessageValue):
        if message.descriptor.type_hash != descriptor.type_hash:
            raise SchemaError(
                f"Expected {descriptor.name}, got {message.descriptor.name}"
            )
        return message
    if isinstance(message, dict):
        return descriptor.new(**message)
    return check_value(descriptor, message, descriptor.name)
