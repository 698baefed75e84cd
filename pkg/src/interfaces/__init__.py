from src.interfaces.types import (
    ArrayType, MessageValue, PrimitiveKind, TypeDescriptor,
)
from src.interfaces.type_hash import compute_type_hash, compute_topic_id
from src.interfaces.serialization import serialize, deserialize

__all__ = [
    "ArrayType", "MessageValue", "PrimitiveKind", "TypeDescriptor",
    "compute_type_hash", "compute_topic_id", "serialize", "deserialize",
]
