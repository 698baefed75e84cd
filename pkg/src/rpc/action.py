import inspect
import logging
import os
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Callable, Optional

from src.graph.events import ExecutorWorkItem, Waitable, WorkKind
from src.graph.publisher import Publisher
from src.graph.subscription import Subscription
from src.interfaces import builtin
from src.interfaces.serialization import coerce_message
from src.interfaces.types import PrimitiveKind as K, TypeDescriptor
from src.rpc.future import Future
from src.rpc.goal_status import GoalEvent, GoalState, GoalStatus, goal_transition
from src.rpc.service import GUID_FIELD, Client, Service, ServiceType
from src.shared.errors import GoalRejectedError, ServerLostError, TransitionError
from src.transport.qos import HistoryKind, QosProfile, Reliability

logger = logging.getLogger(__name__)

# Feedback and status must arrive complete and in order
ACTION_TOPIC_QOS = QosProfile(reliability=Reliability.RELIABLE, history=HistoryKind.KEEP_ALL)


class CancelOutcome(IntEnum):
    ACCEPTED = 0
    REJECTED = 1
    UNKNOWN_GOAL = 2
    ALREADY_TERMINAL = 3


@dataclass(frozen=True)
class ActionType:
    name: str
    goal: TypeDescriptor
    result: TypeDescriptor
    feedback: TypeDescriptor

    @property
    def send_goal(self) -> ServiceType:
        return _send_goal_type(self)

    @property
    def cancel_goal(self) -> ServiceType:
        return _cancel_goal_type(self)

    @property
    def get_result(self) -> ServiceType:
        return _get_result_type(self)

    @property
    def feedback_message(self) -> TypeDescriptor:
        return _feedback_message(self)

    @property
    def status_message(self) -> TypeDescriptor:
        return _status_message(self)


@lru_cache(maxsize=None)
def _send_goal_type(action: ActionType) -> ServiceType:
    return ServiceType(
        f"{action.name}_SendGoal",
        TypeDescriptor(f"{action.name}_SendGoal_Request", (("goal_id", GUID_FIELD), ("goal", action.goal))),
        TypeDescriptor(f"{action.name}_SendGoal_Response", (("accepted", K.BOOL), ("stamp", K.FLOAT64))),
    )


@lru_cache(maxsize=None)
def _cancel_goal_type(action: ActionType) -> ServiceType:
    return ServiceType(
        f"{action.name}_CancelGoal",
        TypeDescriptor(f"{action.name}_CancelGoal_Request", (("goal_id", GUID_FIELD),)),
        TypeDescriptor(f"{action.name}_CancelGoal_Response", (("outcome", K.UINT8),)),
    )


@lru_cache(maxsize=None)
def _get_result_type(action: ActionType) -> ServiceType:
    return ServiceType(
        f"{action.name}_GetResult",
        TypeDescriptor(f"{action.name}_GetResult_Request", (("goal_id", GUID_FIELD),)),
        TypeDescriptor(f"{action.name}_GetResult_Response", (("status", K.UINT8), ("result", action.result))),
    )


@lru_cache(maxsize=None)
def _feedback_message(action: ActionType) -> TypeDescriptor:
    return TypeDescriptor(f"{action.name}_FeedbackMessage", (("goal_id", GUID_FIELD), ("feedback", action.feedback)))


@lru_cache(maxsize=None)
def _status_message(action: ActionType) -> TypeDescriptor:
    return TypeDescriptor(f"{action.name}_GoalStatus", (
        ("goal_id", GUID_FIELD), ("status", K.UINT8), ("stamp", K.FLOAT64),
    ))


def action_names(name: str) -> dict:
    base = f"{name}/_action"
    return {
        "send_goal": f"{base}/send_goal",
        "cancel_goal": f"{base}/cancel_goal",
        "get_result": f"{base}/get_result",
        "feedback": f"{base}/feedback",
        "status": f"{base}/status",
    }


COUNTDOWN = ActionType("example/Countdown", builtin.COUNTDOWN_GOAL, builtin.COUNTDOWN_RESULT,
                       builtin.COUNTDOWN_FEEDBACK)

ACTION_TYPES = {COUNTDOWN.name: COUNTDOWN}


# --- Server ---

class ServerGoalHandle:
    """Server view of one goal. The execute callback drives it."""

    def __init__(self, server: "ActionServer", goal_id: bytes, goal, now: float):
        self.server = server
        self.goal_id = goal_id
        self.goal = goal
        self.status = GoalStatus.accepted(goal_id, now)
        self.result = None
        self.runner = None

    @property
    def state(self) -> GoalState:
        return self.status.state

    @property
    def is_active(self) -> bool:
        return not self.status.terminal

    @property
    def is_cancel_requested(self) -> bool:
        return self.status.state == GoalState.CANCELING

    def publish_feedback(self, feedback) -> None:
        self.server._publish_feedback(self, feedback)

    def succeed(self) -> None:
        self.server._transition(self, GoalEvent.SUCCEED)

    def abort(self) -> None:
        self.server._transition(self, GoalEvent.ABORT)

    def canceled(self) -> None:
        self.server._transition(self, GoalEvent.CANCELED)


class ActionServer(Waitable):
    """Goal/feedback/result/cancel server over three services and two topics.

    `execute_callback(goal_handle)` may be a generator: each step runs as its
    own executor work item and every yielded value that is not None is
    published as feedback. Its return value is the result. A goal left
    non-terminal when the callback returns succeeds.
    """

    def __init__(self, node, name: str, action_type: ActionType, execute_callback: Callable,
                 goal_callback: Optional[Callable] = None, cancel_callback: Optional[Callable] = None):
        self.node = node
        self.name = node.resolve(name)
        self.action_type = action_type
        self.execute_callback = execute_callback
        self.goal_callback = goal_callback
        self.cancel_callback = cancel_callback
        self.participant = node.participant
        self.clock = self.participant.clock
        self.goals: dict = {}
        names = action_names(self.name)
        self._feedback = Publisher(node, names["feedback"], action_type.feedback_message, ACTION_TOPIC_QOS)
        self._status = Publisher(node, names["status"], action_type.status_message, ACTION_TOPIC_QOS)
        self._services = [
            Service(node, names["send_goal"], action_type.send_goal, self._on_send_goal),
            Service(node, names["cancel_goal"], action_type.cancel_goal, self._on_cancel_goal),
            Service(node, names["get_result"], action_type.get_result, self._on_get_result),
        ]
        logger.debug(f"Action server {self.name} [{action_type.name}] ready")

    # --- Service handlers ---

    def _on_send_goal(self, request):
        goal_id = request.goal_id
        now = self.clock.now()
        if goal_id in self.goals:
            logger.warning(f"{self.name}: duplicate goal id {goal_id.hex()}, rejected")
            return {"accepted": False, "stamp": now}
        accepted = True if self.goal_callback is None else bool(self.goal_callback(request.goal))
        if not accepted:
            logger.info(f"{self.name}: goal {goal_id.hex()} rejected")
            return {"accepted": False, "stamp": now}
        handle = ServerGoalHandle(self, goal_id, request.goal, now)
        self.goals[goal_id] = handle
        self._publish_status(handle)
        logger.info(f"{self.name}: goal {goal_id.hex()} accepted")
        return {"accepted": True, "stamp": now}

    def _on_cancel_goal(self, request):
        handle = self.goals.get(request.goal_id)
        if handle is None:
            return {"outcome": CancelOutcome.UNKNOWN_GOAL}
        if not handle.is_active:
            return {"outcome": CancelOutcome.ALREADY_TERMINAL}
        if handle.is_cancel_requested:
            return {"outcome": CancelOutcome.ACCEPTED}
        if self.cancel_callback is None or not self.cancel_callback(handle):
            logger.info(f"{self.name}: cancel of {handle.goal_id.hex()} declined")
            return {"outcome": CancelOutcome.REJECTED}
        if handle.state == GoalState.ACCEPTED:
            self._start(handle)
        self._transition(handle, GoalEvent.CANCEL_GOAL)
        return {"outcome": CancelOutcome.ACCEPTED}

    def _on_get_result(self, request):
        handle = self.goals.get(request.goal_id)
        if handle is None:
            return {"status": 0, "result": self.action_type.result.new()}
        result = handle.result if handle.result is not None else self.action_type.result.new()
        return {"status": int(handle.state), "result": result}

    # --- Goal state ---

    def _publish_status(self, handle: ServerGoalHandle) -> None:
        self._status.publish({"goal_id": handle.goal_id, "status": int(handle.state), "stamp": self.clock.now()})

    def _publish_feedback(self, handle: ServerGoalHandle, feedback) -> None:
        value = coerce_message(self.action_type.feedback, feedback)
        self._feedback.publish({"goal_id": handle.goal_id, "feedback": value})

    def _transition(self, handle: ServerGoalHandle, event: GoalEvent) -> None:
        handle.status = goal_transition(handle.status, event, self.clock.now())
        logger.debug(f"{self.name}: goal {handle.goal_id.hex()} -> {handle.state.name}")
        self._publish_status(handle)

    def _start(self, handle: ServerGoalHandle) -> None:
        self._transition(handle, GoalEvent.EXECUTE)
        handle.runner = self.execute_callback(handle)

    def _finish(self, handle: ServerGoalHandle, result) -> None:
        handle.result = coerce_message(self.action_type.result,
                                       result if result is not None else self.action_type.result.new())
        if handle.is_active:
            self._transition(handle, GoalEvent.SUCCEED)

    def _step(self, handle: ServerGoalHandle) -> Callable[[], None]:
        def run():
            if not handle.is_active:
                return
            try:
                if handle.state == GoalState.ACCEPTED:
                    self._start(handle)
                    if not inspect.isgenerator(handle.runner):
                        self._finish(handle, handle.runner)
                        return
                feedback = next(handle.runner)
                if feedback is not None:
                    self._publish_feedback(handle, feedback)
            except StopIteration as done:
                self._finish(handle, done.value)
            except Exception as e:
                logger.exception(f"{self.name}: goal {handle.goal_id.hex()} failed: {e}")
                self.participant.diagnostics.increment("callback_errors")
                self.participant.diagnostics.add_error(self.name, f"Goal {handle.goal_id.hex()} failed: {e}",
                                                       impact="goal aborted", quiet=True)
                if handle.result is None:
                    handle.result = self.action_type.result.new()
                if handle.is_active:
                    try:
                        self._transition(handle, GoalEvent.ABORT)
                    except TransitionError:
                        pass
        return run

    # --- Executor ---

    def collect(self, now: float) -> list:
        work = []
        for service in self._services:
            work.extend(service.collect(now))
        for goal_id, handle in list(self.goals.items()):
            if handle.is_active:
                work.append(ExecutorWorkItem(WorkKind.GOAL_WORK, self, now, self._step(handle),
                                             label=f"{self.name}:{goal_id.hex()[:8]}"))
        return work

    def next_ready_time(self) -> Optional[float]:
        if any(h.is_active for h in self.goals.values()):
            return self.clock.now()
        times = [t for t in (s.next_ready_time() for s in self._services) if t is not None]
        return min(times) if times else None

    def destroy(self) -> None:
        for service in self._services:
            service.destroy()
        self._feedback.destroy()
        self._status.destroy()


# --- Client ---

@dataclass(frozen=True)
class GoalResult:
    status: GoalState
    result: object


class ClientGoalHandle:
    def __init__(self, client: "ActionClient", goal_id: bytes, feedback_callback: Optional[Callable]):
        self.client = client
        self.goal_id = goal_id
        self.feedback_callback = feedback_callback
        self.accepted: Optional[bool] = None
        self.status: Optional[GoalState] = None
        self.feedback: list = []
        self.result_future = Future()
        self._result_requested = False

    @property
    def done(self) -> bool:
        return self.result_future.done()

    def get_result_async(self) -> Future:
        return self.result_future

    def cancel_goal_async(self) -> Future:
        return self.client.cancel_goal_async(self)


class ActionClient(Waitable):
    def __init__(self, node, name: str, action_type: ActionType):
        self.node = node
        self.name = node.resolve(name)
        self.action_type = action_type
        self.participant = node.participant
        self.handles: dict = {}
        names = action_names(self.name)
        self._send_goal = Client(node, names["send_goal"], action_type.send_goal)
        self._cancel_goal = Client(node, names["cancel_goal"], action_type.cancel_goal)
        self._get_result = Client(node, names["get_result"], action_type.get_result)
        self._feedback = Subscription(node, names["feedback"], action_type.feedback_message,
                                      ACTION_TOPIC_QOS, self._on_feedback)
        self._status = Subscription(node, names["status"], action_type.status_message,
                                    ACTION_TOPIC_QOS, self._on_status)
        self._clients = (self._send_goal, self._cancel_goal, self._get_result)

    def server_is_ready(self) -> bool:
        return all(c.service_is_ready() for c in self._clients)

    def wait_for_server(self, executor, timeout: float = 5.0) -> bool:
        return executor.spin_until(self.server_is_ready, timeout)

    def send_goal_async(self, goal, feedback_callback: Optional[Callable] = None) -> Future:
        """Future resolving to a ClientGoalHandle once the server decides."""
        goal_id = os.urandom(16)
        handle = ClientGoalHandle(self, goal_id, feedback_callback)
        self.handles[goal_id] = handle
        accepted_future = Future()
        request = self._send_goal.call_async({"goal_id": goal_id, "goal": coerce_message(self.action_type.goal, goal)})

        def on_response(response: Future):
            error = response.exception()
            if error is not None:
                self.handles.pop(goal_id, None)
                accepted_future.set_exception(error)
                return
            handle.accepted = response.result().accepted
            if not handle.accepted:
                self.handles.pop(goal_id, None)
                handle.result_future.set_exception(GoalRejectedError(f"Goal {goal_id.hex()} rejected by {self.name}"))
            elif handle.status is None:
                handle.status = GoalState.ACCEPTED
            accepted_future.set_result(handle)

        request.add_done_callback(on_response)
        return accepted_future

    def cancel_goal_async(self, handle: ClientGoalHandle) -> Future:
        outcome = Future()
        if handle.status is not None and handle.status.terminal:
            outcome.set_result(CancelOutcome.ALREADY_TERMINAL)
            return outcome
        request = self._cancel_goal.call_async({"goal_id": handle.goal_id})

        def on_response(response: Future):
            if response.exception() is not None:
                outcome.set_exception(response.exception())
            else:
                outcome.set_result(CancelOutcome(response.result().outcome))

        request.add_done_callback(on_response)
        return outcome

    def _on_feedback(self, message) -> None:
        handle = self.handles.get(message.goal_id)
        if handle is None:
            return
        handle.feedback.append(message.feedback)
        if handle.feedback_callback is not None:
            handle.feedback_callback(message.feedback)

    def _on_status(self, message) -> None:
        handle = self.handles.get(message.goal_id)
        if handle is None:
            return
        state = GoalState(message.status)
        if handle.status is not None and handle.status.terminal:
            return
        handle.status = state
        if state.terminal and not handle._result_requested:
            self._request_result(handle)

    def _request_result(self, handle: ClientGoalHandle) -> None:
        handle._result_requested = True
        request = self._get_result.call_async({"goal_id": handle.goal_id})

        def on_response(response: Future):
            if response.exception() is not None:
                handle.result_future.set_exception(response.exception())
            else:
                reply = response.result()
                handle.result_future.set_result(GoalResult(GoalState(reply.status), reply.result))

        request.add_done_callback(on_response)

    def _server_lost(self, handle: ClientGoalHandle) -> Callable[[], None]:
        def run():
            self.handles.pop(handle.goal_id, None)
            handle.result_future.set_exception(ServerLostError(
                f"Action server {self.name} vanished while goal {handle.goal_id.hex()} was active"))
        return run

    def collect(self, now: float) -> list:
        work = []
        for client in self._clients:
            work.extend(client.collect(now))
        work.extend(self._feedback.collect(now))
        work.extend(self._status.collect(now))
        if not self._send_goal.service_is_ready():
            for handle in list(self.handles.values()):
                if handle.accepted and not handle.done:
                    work.append(ExecutorWorkItem(WorkKind.GOAL_WORK, self, now, self._server_lost(handle),
                                                 label=f"{self.name}:server-lost"))
        return work

    def next_ready_time(self) -> Optional[float]:
        waitables = self._clients + (self._feedback, self._status)
        times = [t for t in (w.next_ready_time() for w in waitables) if t is not None]
        return min(times) if times else None

    def destroy(self) -> None:
        for client in self._clients:
            client.destroy()
        self._feedback.destroy()
        self._status.destroy()
