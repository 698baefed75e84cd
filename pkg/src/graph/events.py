from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional


class EventKind(str, Enum):
    MATCHED = "MATCHED"
    UNMATCHED = "UNMATCHED"
    INCOMPATIBLE_QOS = "INCOMPATIBLE_QOS"
    TYPE_MISMATCH = "TYPE_MISMATCH"
    DEADLINE_MISSED = "DEADLINE_MISSED"
    LIVELINESS_CHANGED = "LIVELINESS_CHANGED"
    SAMPLE_LOST = "SAMPLE_LOST"


@dataclass(frozen=True)
class EndpointEvent:
    kind: EventKind
    topic: str
    time: float
    count: int = 1
    peer_guid: Optional[bytes] = None
    detail: dict = field(default_factory=dict)


class WorkKind(str, Enum):
    MESSAGE = "MESSAGE"
    SERVICE_REQUEST = "SERVICE_REQUEST"
    SERVICE_RESPONSE = "SERVICE_RESPONSE"
    TIMER = "TIMER"
    EVENT = "EVENT"
    GOAL_WORK = "GOAL_WORK"


@dataclass
class ExecutorWorkItem:
    """One callback invocation the executor runs exactly once."""

    kind: WorkKind
    target: object
    ready_at: float
    run: Callable[[], None]
    label: str = ""
    done: bool = False

    def execute(self) -> None:
        if self.done:
            raise RuntimeError(f"Work item {self.label or self.kind.value} already executed")
        self.done = True
        self.run()


class Waitable:
    """Anything a node owns that can produce work for the executor."""

    def collect(self, now: float) -> list:
        return []

    def next_ready_time(self) -> Optional[float]:
        return None
