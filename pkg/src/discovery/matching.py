from enum import Enum
from typing import Tuple

from src.transport.qos import QosProfile


class Incompatibility(str, Enum):
    RELIABILITY = "RELIABILITY"
    DURABILITY = "DURABILITY"
    DEADLINE = "DEADLINE"
    LIVELINESS = "LIVELINESS"
    LEASE_DURATION = "LEASE_DURATION"


def _deadline(value):
    return float("inf") if value is None else value


def qos_compatible(offered: QosProfile, requested: QosProfile) -> Tuple[bool, list]:
    """Request-offered rule: the writer must offer at least what the reader
    asks for. History and lifespan never affect matching."""
    reasons = []
    if offered.reliability < requested.reliability:
        reasons.append(Incompatibility.RELIABILITY)
    if offered.durability < requested.durability:
        reasons.append(Incompatibility.DURABILITY)
    if _deadline(offered.deadline) > _deadline(requested.deadline):
        reasons.append(Incompatibility.DEADLINE)
    if offered.liveliness < requested.liveliness:
        reasons.append(Incompatibility.LIVELINESS)
    if offered.lease_duration > requested.lease_duration:
        reasons.append(Incompatibility.LEASE_DURATION)
    return not reasons, reasons
