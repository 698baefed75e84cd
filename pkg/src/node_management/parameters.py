import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

from src.interfaces.builtin import register
from src.interfaces.types import PrimitiveKind as K, TypeDescriptor
from src.shared.errors import (
    ParameterAccessError, ParameterTypeError, UnknownParameterError, ValidationError,
)

logger = logging.getLogger(__name__)

PARAMETER_EVENTS_TOPIC = "/parameter_events"

PARAMETER_EVENT = register(TypeDescriptor("std/ParameterEvent", (
    ("node", K.STRING),
    ("kind", K.STRING),     # "declared" | "changed"
    ("name", K.STRING),
    ("type", K.STRING),
    ("value", K.STRING),    # JSON text
)))

INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1


class ParameterType(str, Enum):
    BOOL = "bool"
    INT64 = "int64"
    FLOAT64 = "float64"
    STRING = "string"
    BYTE_ARRAY = "byte[]"
    BOOL_ARRAY = "bool[]"
    INT64_ARRAY = "int64[]"
    FLOAT64_ARRAY = "float64[]"
    STRING_ARRAY = "string[]"


_ELEMENT = {
    ParameterType.BOOL_ARRAY: ParameterType.BOOL,
    ParameterType.INT64_ARRAY: ParameterType.INT64,
    ParameterType.FLOAT64_ARRAY: ParameterType.FLOAT64,
    ParameterType.STRING_ARRAY: ParameterType.STRING,
}


@dataclass(frozen=True)
class ParameterRecord:
    name: str
    declared_type: ParameterType
    value: object
    read_only: bool = False
    description: str = ""


def _scalar_ok(ptype: ParameterType, value) -> bool:
    if ptype == ParameterType.BOOL:
        return isinstance(value, bool)
    if ptype == ParameterType.INT64:
        return isinstance(value, int) and not isinstance(value, bool) and INT64_MIN <= value <= INT64_MAX
    if ptype == ParameterType.FLOAT64:
        return isinstance(value, float)
    if ptype == ParameterType.STRING:
        return isinstance(value, str)
    return False


def check_parameter_value(ptype: ParameterType, value):
    """Return the stored form of `value` or raise ParameterTypeError.

    No conversions between kinds: an int is not a float64 and a list of
    ints is not a float64 array.
    """
    ptype = ParameterType(ptype)
    if ptype == ParameterType.BYTE_ARRAY:
        if isinstance(value, (bytes, bytearray)):
            return bytes(value)
    elif ptype in _ELEMENT:
        if isinstance(value, (list, tuple)) and all(_scalar_ok(_ELEMENT[ptype], v) for v in value):
            return tuple(value)
    elif _scalar_ok(ptype, value):
        return value
    raise ParameterTypeError(f"Expected {ptype.value}, got {type(value).__name__} {value!r}")


def infer_parameter_type(value) -> ParameterType:
    if isinstance(value, bool):
        return ParameterType.BOOL
    if isinstance(value, int):
        return ParameterType.INT64
    if isinstance(value, float):
        return ParameterType.FLOAT64
    if isinstance(value, str):
        return ParameterType.STRING
    if isinstance(value, (bytes, bytearray)):
        return ParameterType.BYTE_ARRAY
    if isinstance(value, (list, tuple)) and value:
        element = infer_parameter_type(value[0])
        for array_type, element_type in _ELEMENT.items():
            if element_type == element:
                return array_type
    raise ParameterTypeError(f"Cannot infer a parameter type from {value!r}")


def default_parameter_value(ptype: ParameterType):
    return {
        ParameterType.BOOL: False, ParameterType.INT64: 0, ParameterType.FLOAT64: 0.0,
        ParameterType.STRING: "", ParameterType.BYTE_ARRAY: b"",
    }.get(ParameterType(ptype), ())


def encode_parameter_value(ptype: ParameterType, value) -> str:
    """JSON text used on the wire by parameter services and events."""
    if ParameterType(ptype) == ParameterType.BYTE_ARRAY:
        return json.dumps(list(value))
    return json.dumps(list(value) if isinstance(value, tuple) else value)


def decode_parameter_value(ptype: ParameterType, text: str):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParameterTypeError(f"Unparseable {ParameterType(ptype).value} value {text!r}: {e}") from None
    if ParameterType(ptype) == ParameterType.BYTE_ARRAY and isinstance(raw, list):
        try:
            return bytes(raw)
        except (TypeError, ValueError):
            raise ParameterTypeError(f"Bad byte array {text!r}") from None
    return raw


def parse_parameter_text(ptype: ParameterType, text: str):
    """Operator input: JSON when it parses, otherwise a bare string."""
    ptype = ParameterType(ptype)
    if ptype == ParameterType.STRING:
        try:
            value = json.loads(text)
            return value if isinstance(value, str) else text
        except json.JSONDecodeError:
            return text
    value = decode_parameter_value(ptype, text)
    # "2" typed at a prompt means 2.0 for a float parameter
    if ptype == ParameterType.FLOAT64 and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if ptype == ParameterType.FLOAT64_ARRAY and isinstance(value, list):
        return [float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in value]
    return value


class ParameterStore:
    """Declared, typed parameters of one node.

    `on_change(event)` receives a PARAMETER_EVENT-shaped dict after every
    successful declare or set.
    """

    def __init__(self, owner: str, on_change: Optional[Callable[[dict], None]] = None):
        self.owner = owner
        self.on_change = on_change
        self._records: dict = {}

    def declare(self, name: str, value=None, declared_type=None, read_only: bool = False,
                description: str = "") -> ParameterRecord:
        if not name:
            raise ValidationError("Parameter name must be non-empty")
        if name in self._records:
            raise ValidationError(f"{self.owner}: parameter {name} already declared")
        if declared_type is None:
            declared_type = infer_parameter_type(value)
        declared_type = ParameterType(declared_type)
        if value is None:
            value = default_parameter_value(declared_type)
        record = ParameterRecord(name, declared_type, check_parameter_value(declared_type, value),
                                 read_only, description)
        self._records[name] = record
        logger.debug(f"{self.owner}: declared {name}: {declared_type.value} = {record.value!r}")
        self._emit("declared", record)
        return record

    def declare_record(self, record: ParameterRecord) -> ParameterRecord:
        return self.declare(record.name, record.value, record.declared_type, record.read_only, record.description)

    def has(self, name: str) -> bool:
        return name in self._records

    def describe(self, name: str) -> ParameterRecord:
        record = self._records.get(name)
        if record is None:
            raise UnknownParameterError(f"{self.owner}: parameter {name} is not declared")
        return record

    def get(self, name: str):
        return self.describe(name).value

    def set(self, name: str, value) -> ParameterRecord:
        record = self.describe(name)
        if record.read_only:
            raise ParameterAccessError(f"{self.owner}: parameter {name} is read-only")
        updated = replace(record, value=check_parameter_value(record.declared_type, value))
        self._records[name] = updated
        logger.info(f"{self.owner}: {name} = {updated.value!r}")
        self._emit("changed", updated)
        return updated

    def list(self, prefix: str = "") -> list:
        return sorted(n for n in self._records if n.startswith(prefix))

    def _emit(self, kind: str, record: ParameterRecord) -> None:
        if self.on_change is None:
            return
        self.on_change({
            "node": self.owner,
            "kind": kind,
            "name": record.name,
            "type": record.declared_type.value,
            "value": encode_parameter_value(record.declared_type, record.value),
        })


def declare_parameter(node, record: ParameterRecord) -> ParameterRecord:
    return node.parameters.declare_record(record)


def set_parameter(node, name: str, value) -> ParameterRecord:
    return node.parameters.set(name, value)


def get_parameter(node, name: str):
    return node.parameters.get(name)


def list_parameters(node, prefix: str = "") -> list:
    return node.parameters.list(prefix)
