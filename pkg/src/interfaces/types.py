import math
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Optional, Union

from src.shared.errors import SchemaError

MAX_LENGTH = 2**32 - 1


class PrimitiveKind(Enum):
    BOOL = "bool"
    INT8 = "int8"
    UINT8 = "uint8"
    INT16 = "int16"
    UINT16 = "uint16"
    INT32 = "int32"
    UINT32 = "uint32"
    INT64 = "int64"
    UINT64 = "uint64"
    FLOAT32 = "float32"
    FLOAT64 = "float64"
    STRING = "string"

    @property
    def struct_code(self) -> Optional[str]:
        return _STRUCT_CODES[self]

    @property
    def width(self) -> Optional[int]:
        """Fixed wire width in bytes; None for length-prefixed strings."""
        return _WIDTHS[self]

    @property
    def is_integer(self) -> bool:
        return self in _INT_RANGES

    @property
    def is_float(self) -> bool:
        return self in (PrimitiveKind.FLOAT32, PrimitiveKind.FLOAT64)

    @classmethod
    def parse(cls, text: str) -> "PrimitiveKind":
        try:
            return cls(text)
        except ValueError:
            raise SchemaError(f"Unknown primitive kind: {text!r}") from None


_STRUCT_CODES = {
    PrimitiveKind.BOOL: "?", PrimitiveKind.INT8: "b", PrimitiveKind.UINT8: "B",
    PrimitiveKind.INT16: "h", PrimitiveKind.UINT16: "H",
    PrimitiveKind.INT32: "i", PrimitiveKind.UINT32: "I",
    PrimitiveKind.INT64: "q", PrimitiveKind.UINT64: "Q",
    PrimitiveKind.FLOAT32: "f", PrimitiveKind.FLOAT64: "d",
    PrimitiveKind.STRING: None,
}
_WIDTHS = {
    PrimitiveKind.BOOL: 1, PrimitiveKind.INT8: 1, PrimitiveKind.UINT8: 1,
    PrimitiveKind.INT16: 2, PrimitiveKind.UINT16: 2,
    PrimitiveKind.INT32: 4, PrimitiveKind.UINT32: 4,
    PrimitiveKind.INT64: 8, PrimitiveKind.UINT64: 8,
    PrimitiveKind.FLOAT32: 4, PrimitiveKind.FLOAT64: 8,
    PrimitiveKind.STRING: None,
}
_INT_RANGES = {
    PrimitiveKind.INT8: (-2**7, 2**7 - 1), PrimitiveKind.UINT8: (0, 2**8 - 1),
    PrimitiveKind.INT16: (-2**15, 2**15 - 1), PrimitiveKind.UINT16: (0, 2**16 - 1),
    PrimitiveKind.INT32: (-2**31, 2**31 - 1), PrimitiveKind.UINT32: (0, 2**32 - 1),
    PrimitiveKind.INT64: (-2**63, 2**63 - 1), PrimitiveKind.UINT64: (0, 2**64 - 1),
}
_FLOAT32_MAX = 3.4028234663852886e38


@dataclass(frozen=True)
class ArrayType:
    """Array of a primitive kind.

    length=None means unbounded; with bounded=False `length` is exact,
    with bounded=True it is an upper bound.
    """

    element: PrimitiveKind
    length: Optional[int] = None
    bounded: bool = False

    def __post_init__(self):
        if self.length is not None and not (0 <= self.length <= MAX_LENGTH):
            raise SchemaError(f"Array length out of range: {self.length}")
        if self.length is None and self.bounded:
            raise SchemaError("A bounded array needs a bound")

    @property
    def token(self) -> str:
        if self.length is None:
            return f"{self.element.value}[]"
        if self.bounded:
            return f"{self.element.value}[<={self.length}]"
        return f"{self.element.value}[{self.length}]"


FieldType = Union[PrimitiveKind, ArrayType, "TypeDescriptor"]


@dataclass(frozen=True)
class TypeDescriptor:
    """Schema of a message type: a name plus ordered, typed fields."""

    name: str
    fields: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(tuple(f) for f in self.fields))
        validate_descriptor(self)

    @property
    def field_names(self) -> list:
        return [name for name, _ in self.fields]

    def field_type(self, name: str) -> FieldType:
        for fname, ftype in self.fields:
            if fname == name:
                return ftype
        raise SchemaError(f"{self.name} has no field {name!r}")

    @property
    def type_hash(self) -> int:
        from src.interfaces.type_hash import compute_type_hash
        cached = self.__dict__.get("_type_hash")
        if cached is None:
            cached = compute_type_hash(self)
            object.__setattr__(self, "_type_hash", cached)
        return cached

    def new(self, **values) -> "MessageValue":
        """Build a MessageValue; missing fields take their zero value."""
        full = {name: default_value(ftype) for name, ftype in self.fields}
        unknown = set(values) - set(full)
        if unknown:
            raise SchemaError(f"{self.name} has no fields {sorted(unknown)}")
        full.update(values)
        return MessageValue(self, full)

    def __repr__(self):
        return f"TypeDescriptor({self.name!r}, {len(self.fields)} fields)"


def validate_descriptor(descriptor: TypeDescriptor, _stack: tuple = ()) -> None:
    if not isinstance(descriptor.name, str) or not descriptor.name:
        raise SchemaError("Descriptor name must be a non-empty string")
    if any(d is descriptor or d.name == descriptor.name for d in _stack):
        raise SchemaError(f"Recursive nesting of {descriptor.name}")
    seen = set()
    for entry in descriptor.fields:
        if len(entry) != 2:
            raise SchemaError(f"{descriptor.name}: field entries are (name, type) pairs")
        fname, ftype = entry
        if not isinstance(fname, str) or not fname:
            raise SchemaError(f"{descriptor.name}: field names must be non-empty strings")
        if fname in seen:
            raise SchemaError(f"{descriptor.name}: duplicate field {fname!r}")
        seen.add(fname)
        if isinstance(ftype, TypeDescriptor):
            validate_descriptor(ftype, _stack + (descriptor,))
        elif not isinstance(ftype, (PrimitiveKind, ArrayType)):
            raise SchemaError(f"{descriptor.name}.{fname}: unsupported field type {ftype!r}")


def default_value(ftype: FieldType):
    if isinstance(ftype, TypeDescriptor):
        return ftype.new()
    if isinstance(ftype, ArrayType):
        count = ftype.length if (ftype.length is not None and not ftype.bounded) else 0
        if ftype.element == PrimitiveKind.UINT8:
            return bytes(count)
        return tuple(default_value(ftype.element) for _ in range(count))
    if ftype == PrimitiveKind.BOOL:
        return False
    if ftype == PrimitiveKind.STRING:
        return ""
    if ftype.is_float:
        return 0.0
    return 0


def _check_primitive(kind: PrimitiveKind, value, where: str):
    """Validate one primitive value and return its canonical Python form."""
    if kind == PrimitiveKind.BOOL:
        if not isinstance(value, bool):
            raise SchemaError(f"{where}: expected bool, got {type(value).__name__}")
        return value
    if kind == PrimitiveKind.STRING:
        if not isinstance(value, str):
            raise SchemaError(f"{where}: expected string, got {type(value).__name__}")
        if len(value.encode("utf-8")) > MAX_LENGTH:
            raise SchemaError(f"{where}: string too long")
        return value
    if kind.is_float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: expected {kind.value}, got {type(value).__name__}")
        value = float(value)
        if kind == PrimitiveKind.FLOAT32 and math.isfinite(value) and abs(value) > _FLOAT32_MAX:
            raise SchemaError(f"{where}: {value} overflows float32")
        return value
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected {kind.value}, got {type(value).__name__}")
    low, high = _INT_RANGES[kind]
    if not low <= value <= high:
        raise SchemaError(f"{where}: {value} out of range for {kind.value}")
    return value


def check_value(ftype: FieldType, value, where: str):
    """Validate `value` against `ftype`; returns the immutable canonical form."""
    if isinstance(ftype, TypeDescriptor):
        if isinstance(value, MessageValue):
            if value.descriptor.type_hash != ftype.type_hash:
                raise SchemaError(
                    f"{where}: expected {ftype.name}, got {value.descriptor.name}"
                )
            return value
        if isinstance(value, dict):
            return MessageValue(ftype, value)
        raise SchemaError(f"{where}: expected {ftype.name} message")
    if isinstance(ftype, ArrayType):
        if ftype.element == PrimitiveKind.UINT8 and isinstance(value, (bytes, bytearray, memoryview)):
            items = bytes(value)
        elif isinstance(value, (list, tuple, bytes, bytearray)):
            items = value
        else:
            raise SchemaError(f"{where}: expected array, got {type(value).__name__}")
        if ftype.length is not None:
            if ftype.bounded and len(items) > ftype.length:
                raise SchemaError(f"{where}: {len(items)} elements exceeds bound {ftype.length}")
            if not ftype.bounded and len(items) != ftype.length:
                raise SchemaError(f"{where}: expected exactly {ftype.length} elements, got {len(items)}")
        if len(items) > MAX_LENGTH:
            raise SchemaError(f"{where}: array too long")
        if ftype.element == PrimitiveKind.UINT8:
            if isinstance(items, bytes):
                return items
            try:
                return bytes(items)
            except (TypeError, ValueError):
                raise SchemaError(f"{where}: uint8 array holds non-byte values") from None
        return tuple(_check_primitive(ftype.element, v, f"{where}[{i}]") for i, v in enumerate(items))
    return _check_primitive(ftype, value, where)


class MessageValue:
    """Immutable message instance bound to its descriptor.

    Fields read as `msg.x` or `msg["x"]`. uint8 arrays are held as `bytes`,
    other arrays as tuples, nested messages as MessageValue.
    """

    __slots__ = ("_descriptor", "_values")

    def __init__(self, descriptor: TypeDescriptor, values: dict):
        if not isinstance(descriptor, TypeDescriptor):
            raise SchemaError("MessageValue needs a TypeDescriptor")
        missing = [n for n in descriptor.field_names if n not in values]
        if missing:
            raise SchemaError(f"{descriptor.name}: missing fields {missing}")
        extra = set(values) - set(descriptor.field_names)
        if extra:
            raise SchemaError(f"{descriptor.name}: unknown fields {sorted(extra)}")
        checked = {
            name: check_value(ftype, values[name], f"{descriptor.name}.{name}")
            for name, ftype in descriptor.fields
        }
        object.__setattr__(self, "_descriptor", descriptor)
        object.__setattr__(self, "_values", MappingProxyType(checked))

    @property
    def descriptor(self) -> TypeDescriptor:
        return self._descriptor

    @property
    def values(self) -> MappingProxyType:
        return self._values

    def __getitem__(self, name: str):
        return self._values[name]

    def __getattr__(self, name: str):
        if name.startswith("_"):
            raise AttributeError(name)
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name, value):
        raise AttributeError("MessageValue is immutable")

    def replace(self, **changes) -> "MessageValue":
        merged = dict(self._values)
        merged.update(changes)
        return MessageValue(self._descriptor, merged)

    def to_dict(self) -> dict:
        out = {}
        for name, value in self._values.items():
            if isinstance(value, MessageValue):
                out[name] = value.to_dict()
            elif isinstance(value, tuple):
                out[name] = list(value)
            else:
                out[name] = value
        return out

    def __eq__(self, other):
        if not isinstance(other, MessageValue):
            return NotImplemented
        return (self._descriptor.type_hash == other._descriptor.type_hash
                and dict(self._values) == dict(other._values))

    def __hash__(self):
        return hash((self._descriptor.type_hash, tuple(self._values.items())))

    def __repr__(self):
        body = ", ".join(f"{k}={v!r}" for k, v in self._values.items())
        return f"{self._descriptor.name}({body})"
