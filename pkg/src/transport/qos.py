from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

from src.shared.config import LEASE_DURATION
from src.shared.errors import ValidationError


class Reliability(IntEnum):
    BEST_EFFORT = 0
    RELIABLE = 1


class Durability(IntEnum):
    VOLATILE = 0
    TRANSIENT_LOCAL = 1


class HistoryKind(IntEnum):
    KEEP_LAST = 0
    KEEP_ALL = 1


class Liveliness(IntEnum):
    AUTOMATIC = 0
    MANUAL = 1


@dataclass(frozen=True)
class QosProfile:
    """Delivery contract of one endpoint. Durations are seconds."""

    reliability: Reliability = Reliability.RELIABLE
    durability: Durability = Durability.VOLATILE
    history: HistoryKind = HistoryKind.KEEP_LAST
    depth: int = 10
    deadline: Optional[float] = None
    lifespan: Optional[float] = None
    liveliness: Liveliness = Liveliness.AUTOMATIC
    lease_duration: float = LEASE_DURATION

    def __post_init__(self):
        if self.history == HistoryKind.KEEP_LAST and self.depth < 1:
            raise ValidationError(f"KEEP_LAST depth must be >= 1, got {self.depth}")
        for label, value in (("deadline", self.deadline), ("lifespan", self.lifespan)):
            if value is not None and value <= 0:
                raise ValidationError(f"{label} must be > 0 when present, got {value}")
        if self.lease_duration <= 0:
            raise ValidationError(f"lease_duration must be > 0, got {self.lease_duration}")

    @property
    def reliable(self) -> bool:
        return self.reliability == Reliability.RELIABLE

    @property
    def transient_local(self) -> bool:
        return self.durability == Durability.TRANSIENT_LOCAL

    @property
    def keep_all(self) -> bool:
        return self.history == HistoryKind.KEEP_ALL

    def with_changes(self, **changes) -> "QosProfile":
        return replace(self, **changes)

    def describe(self) -> str:
        history = "KEEP_ALL" if self.keep_all else f"KEEP_LAST({self.depth})"
        parts = [self.reliability.name, self.durability.name, history, self.liveliness.name]
        if self.deadline:
            parts.append(f"deadline={self.deadline}s")
        if self.lifespan:
            parts.append(f"lifespan={self.lifespan}s")
        parts.append(f"lease={self.lease_duration}s")
        return " ".join(parts)


# Common profiles
DEFAULT_QOS = QosProfile()
SENSOR_DATA_QOS = QosProfile(reliability=Reliability.BEST_EFFORT, depth=5)
SERVICE_QOS = QosProfile(reliability=Reliability.RELIABLE, history=HistoryKind.KEEP_ALL, depth=1)
LATCHED_QOS = QosProfile(durability=Durability.TRANSIENT_LOCAL, depth=1)
