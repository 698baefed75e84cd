"""Plain-text schema files.

Grammar (one field per line, order is significant):

    # comment lines and trailing "# ..." comments are ignored
    <field_name>: <kind>

    <kind> :=  bool | int8 | uint8 | int16 | uint16 | int32 | uint32
             | int64 | uint64 | float32 | float64 | string
             | <primitive>[N]       fixed-length array
             | <primitive>[<=N]     bounded array
             | <primitive>[]        unbounded array
             | <package>/<Name>     nested type, resolved through a registry

Field names match [A-Za-z][A-Za-z0-9_]*. A file at <root>/<package>/<Name>.msg
defines the type "<package>/<Name>" unless a name is given explicitly.
"""
import logging
import re
from pathlib import Path
from typing import Optional

from src.interfaces.types import ArrayType, PrimitiveKind, TypeDescriptor
from src.shared.errors import SchemaError

logger = logging.getLogger(__name__)

_FIELD_RE = re.compile(r"^([A-Za-z][A-Za-z0-9_]*)\s*:\s*(\S+)$")
_ARRAY_RE = re.compile(r"^([a-z0-9]+)\[(<=)?(\d*)\]$")


def parse_kind(token: str, registry: Optional[dict] = None):
    match = _ARRAY_RE.match(token)
    if match:
        element = PrimitiveKind.parse(match.group(1))
        bounded = match.group(2) is not None
        digits = match.group(3)
        if bounded and not digits:
            raise SchemaError(f"Bounded array needs a bound: {token!r}")
        return ArrayType(element, int(digits) if digits else None, bounded)
    if "/" in token:
        if not registry or token not in registry:
            raise SchemaError(f"Unknown nested type {token!r}")
        return registry[token]
    return PrimitiveKind.parse(token)


def parse_schema(text: str, name: str, registry: Optional[dict] = None) -> TypeDescriptor:
    """Parse schema text into a TypeDescriptor named `name`."""
    fields = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        match = _FIELD_RE.match(line)
        if not match:
            raise SchemaError(f"{name}: line {lineno}: expected 'name: kind', got {raw_line!r}")
        field_name, token = match.groups()
        try:
            fields.append((field_name, parse_kind(token, registry)))
        except SchemaError as e:
            raise SchemaError(f"{name}: line {lineno}: {e}") from None
    return TypeDescriptor(name, tuple(fields))


def load_descriptor(path, name: Optional[str] = None,
                    registry: Optional[dict] = None) -> TypeDescriptor:
    """Load one schema file; the type name defaults to '<parent>/<stem>'."""
    path = Path(path)
    type_name = name or f"{path.parent.name}/{path.stem}"
    descriptor = parse_schema(path.read_text(encoding="utf-8"), type_name, registry)
    logger.debug(f"Loaded {type_name} from {path} ({len(descriptor.fields)} fields)")
    return descriptor


def load_directory(root, registry: Optional[dict] = None) -> dict:
    """Load every <package>/<Name>.msg below `root`, resolving nested types
    across files regardless of order. Returns a name -> descriptor dict."""
    registry = dict(registry or {})
    pending = {f"{p.parent.name}/{p.stem}": p for p in sorted(Path(root).glob("*/*.msg"))}
    while pending:
        progressed = False
        last_error = None
        for type_name, path in list(pending.items()):
            try:
                registry[type_name] = load_descriptor(path, type_name, registry)
            except SchemaError as e:
                last_error = e
                continue
            del pending[type_name]
            progressed = True
        if not progressed:
            raise SchemaError(f"Unresolvable schema files {sorted(pending)}: {last_error}")
    return registry
