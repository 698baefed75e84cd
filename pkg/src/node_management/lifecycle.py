import logging
from enum import Enum

from src.graph.node import Node
from src.interfaces import builtin
from src.interfaces.types import PrimitiveKind as K, TypeDescriptor
from src.rpc.service import ServiceType, register_service_type
from src.shared.errors import TransitionError
from src.transport.qos import LATCHED_QOS

logger = logging.getLogger(__name__)


class LifecycleState(str, Enum):
    UNCONFIGURED = "UNCONFIGURED"
    INACTIVE = "INACTIVE"
    ACTIVE = "ACTIVE"
    FINALIZED = "FINALIZED"


class TransitionRequest(str, Enum):
    CONFIGURE = "CONFIGURE"
    ACTIVATE = "ACTIVATE"
    DEACTIVATE = "DEACTIVATE"
    CLEANUP = "CLEANUP"
    SHUTDOWN = "SHUTDOWN"


class HookResult(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"


S, R = LifecycleState, TransitionRequest

# Successful hook outcome: (state, request) -> next state. A failing hook
# leaves the origin state; pairs not listed are illegal.
LIFECYCLE_TRANSITIONS = {
    (S.UNCONFIGURED, R.CONFIGURE): S.INACTIVE,
    (S.INACTIVE, R.ACTIVATE): S.ACTIVE,
    (S.ACTIVE, R.DEACTIVATE): S.INACTIVE,
    (S.INACTIVE, R.CLEANUP): S.UNCONFIGURED,
    (S.UNCONFIGURED, R.SHUTDOWN): S.FINALIZED,
    (S.INACTIVE, R.SHUTDOWN): S.FINALIZED,
    (S.ACTIVE, R.SHUTDOWN): S.FINALIZED,
}

LIFECYCLE_EVENT = builtin.register(TypeDescriptor("std/LifecycleEvent", (
    ("node", K.STRING),
    ("transition", K.STRING),
    ("start_state", K.STRING),
    ("goal_state", K.STRING),
    ("stamp", K.FLOAT64),
)))

CHANGE_STATE = register_service_type(ServiceType(
    "std/ChangeState",
    TypeDescriptor("std/ChangeState_Request", (("transition", K.STRING),)),
    TypeDescriptor("std/ChangeState_Response", (("success", K.BOOL), ("state", K.STRING), ("error", K.STRING))),
))
GET_STATE = register_service_type(ServiceType(
    "std/GetState",
    builtin.EMPTY,
    TypeDescriptor("std/GetState_Response", (("state", K.STRING),)),
))


def lifecycle_transition(state: LifecycleState, request: TransitionRequest,
                         outcome: HookResult = HookResult.SUCCESS) -> LifecycleState:
    """Next state per the transition table; raises TransitionError on an illegal pair."""
    state, request, outcome = LifecycleState(state), TransitionRequest(request), HookResult(outcome)
    target = LIFECYCLE_TRANSITIONS.get((state, request))
    if target is None:
        raise TransitionError(f"{request.value} is not allowed from {state.value}")
    return target if outcome == HookResult.SUCCESS else state


def lifecycle_effects(node: "LifecycleNode", request: TransitionRequest, previous: LifecycleState,
                      new_state: LifecycleState) -> None:
    """Apply a successful transition: timers restart on activation and stop
    for good on finalization, and one event goes out on `~/lifecycle/events`."""
    if new_state == LifecycleState.ACTIVE:
        for timer in node.timers:
            if not timer.canceled:
                timer.reset()
    elif new_state == LifecycleState.FINALIZED:
        for timer in node.timers:
            timer.cancel()
    node.lifecycle_events.publish({
        "node": node.fqn,
        "transition": request.value,
        "start_state": previous.value,
        "goal_state": new_state.value,
        "stamp": node.context.clock.now(),
    })


class LifecycleNode(Node):
    """Node managed by the UNCONFIGURED/INACTIVE/ACTIVE/FINALIZED machine.

    Its publishers emit and its timers fire only while ACTIVE; a publish in
    any other state is dropped and counted. Override the `on_*` hooks and
    return False (or HookResult.FAILURE) to refuse a transition.
    """

    def __init__(self, context, name: str, namespace: str = "", **kwargs):
        self.state = LifecycleState.UNCONFIGURED
        self.transition_count = 0
        super().__init__(context, name, namespace, **kwargs)
        self.lifecycle_events = self.create_publisher("~/lifecycle/events", LIFECYCLE_EVENT, LATCHED_QOS,
                                                      gated=False)
        self.create_service("~/lifecycle/change_state", CHANGE_STATE, self._on_change_state)
        self.create_service("~/lifecycle/get_state", GET_STATE, lambda _: {"state": self.state.value})

    def _gate(self):
        return lambda: self.state == LifecycleState.ACTIVE

    # --- Hooks ---

    def on_configure(self):
        return HookResult.SUCCESS

    def on_activate(self):
        return HookResult.SUCCESS

    def on_deactivate(self):
        return HookResult.SUCCESS

    def on_cleanup(self):
        return HookResult.SUCCESS

    def on_shutdown(self):
        return HookResult.SUCCESS

    def _run_hook(self, request: TransitionRequest) -> HookResult:
        hook = getattr(self, f"on_{request.value.lower()}")
        try:
            outcome = hook()
        except Exception as e:
            logger.exception(f"{self.fqn}: {request.value} hook raised: {e}")
            self.participant.diagnostics.add_error(self.fqn, f"{request.value} hook raised: {e}",
                                                   impact="transition failed", quiet=True)
            return HookResult.FAILURE
        if isinstance(outcome, HookResult):
            return outcome
        return HookResult.SUCCESS if outcome is None or outcome is True else HookResult.FAILURE

    # --- Transitions ---

    def trigger(self, request: TransitionRequest) -> LifecycleState:
        """Run one transition. Illegal requests raise TransitionError before
        any hook runs; a failing hook leaves the state unchanged."""
        request = TransitionRequest(request)
        lifecycle_transition(self.state, request)
        outcome = self._run_hook(request)
        previous = self.state
        new_state = lifecycle_transition(previous, request, outcome)
        if outcome == HookResult.FAILURE:
            logger.warning(f"{self.fqn}: {request.value} hook failed, staying {previous.value}")
            return previous
        self.state = new_state
        self.transition_count += 1
        logger.info(f"{self.fqn}: {previous.value} -> {new_state.value}")
        lifecycle_effects(self, request, previous, new_state)
        return new_state

    def configure(self) -> LifecycleState:
        return self.trigger(TransitionRequest.CONFIGURE)

    def activate(self) -> LifecycleState:
        return self.trigger(TransitionRequest.ACTIVATE)

    def deactivate(self) -> LifecycleState:
        return self.trigger(TransitionRequest.DEACTIVATE)

    def cleanup(self) -> LifecycleState:
        return self.trigger(TransitionRequest.CLEANUP)

    def shutdown(self) -> LifecycleState:
        return self.trigger(TransitionRequest.SHUTDOWN)

    def _on_change_state(self, request) -> dict:
        try:
            transition = TransitionRequest(request.transition.upper())
        except ValueError:
            return {"success": False, "state": self.state.value, "error": f"Unknown transition {request.transition!r}"}
        before = self.state
        try:
            after = self.trigger(transition)
        except TransitionError as e:
            return {"success": False, "state": self.state.value, "error": str(e)}
        success = after != before
        return {"success": success, "state": after.value, "error": "" if success else "hook failed"}


def remote_lifecycle_names(node_fqn: str) -> dict:
    return {
        "change_state": f"{node_fqn}/lifecycle/change_state",
        "get_state": f"{node_fqn}/lifecycle/get_state",
        "events": f"{node_fqn}/lifecycle/events",
    }
