from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

from src.shared.errors import TransitionError


class GoalState(IntEnum):
    ACCEPTED = 1
    EXECUTING = 2
    CANCELING = 3
    SUCCEEDED = 4
    CANCELED = 5
    ABORTED = 6

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STATES


class GoalEvent(IntEnum):
    EXECUTE = 1
    CANCEL_GOAL = 2
    SUCCEED = 3
    ABORT = 4
    CANCELED = 5


TERMINAL_STATES = frozenset({GoalState.SUCCEEDED, GoalState.CANCELED, GoalState.ABORTED})

# (state, event) -> next state; every other pair is illegal
GOAL_TRANSITIONS = {
    (GoalState.ACCEPTED, GoalEvent.EXECUTE): GoalState.EXECUTING,
    (GoalState.EXECUTING, GoalEvent.CANCEL_GOAL): GoalState.CANCELING,
    (GoalState.EXECUTING, GoalEvent.SUCCEED): GoalState.SUCCEEDED,
    (GoalState.EXECUTING, GoalEvent.ABORT): GoalState.ABORTED,
    (GoalState.CANCELING, GoalEvent.CANCELED): GoalState.CANCELED,
    (GoalState.CANCELING, GoalEvent.ABORT): GoalState.ABORTED,
    (GoalState.CANCELING, GoalEvent.SUCCEED): GoalState.SUCCEEDED,
}


@dataclass(frozen=True)
class GoalStatus:
    goal_id: bytes
    state: GoalState = GoalState.ACCEPTED
    stamps: tuple = field(default_factory=tuple)  # ((state, time), ...)

    @classmethod
    def accepted(cls, goal_id: bytes, now: float) -> "GoalStatus":
        return cls(goal_id, GoalState.ACCEPTED, ((GoalState.ACCEPTED, now),))

    @property
    def terminal(self) -> bool:
        return self.state.terminal

    def stamp_of(self, state: GoalState) -> Optional[float]:
        for s, t in self.stamps:
            if s == state:
                return t
        return None


def goal_transition(status: GoalStatus, event: GoalEvent, now: float = 0.0) -> GoalStatus:
    """Apply `event`; illegal pairs raise TransitionError and leave `status` as it was."""
    target = GOAL_TRANSITIONS.get((status.state, event))
    if target is None:
        raise TransitionError(f"Goal {status.goal_id.hex()}: {event.name} not allowed in {status.state.name}")
    return replace(status, state=target, stamps=status.stamps + ((target, now),))
