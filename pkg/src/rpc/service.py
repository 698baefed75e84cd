import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

from src.discovery.endpoints import EndpointKind
from src.graph.events import ExecutorWorkItem, Waitable, WorkKind
from src.graph.publisher import Publisher
from src.graph.subscription import Subscription
from src.interfaces import builtin
from src.interfaces.serialization import coerce_message
from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor
from src.rpc.future import Future
from src.shared.errors import ServiceCallError, ServiceTimeoutError
from src.transport.qos import SERVICE_QOS

logger = logging.getLogger(__name__)

GUID_FIELD = ArrayType(K.UINT8, 16)


@dataclass(frozen=True)
class ServiceType:
    name: str
    request: TypeDescriptor
    response: TypeDescriptor

    @property
    def type_hash(self) -> int:
        return request_envelope(self.request).type_hash ^ response_envelope(self.response).type_hash


@lru_cache(maxsize=None)
def request_envelope(body: TypeDescriptor) -> TypeDescriptor:
    """Correlation wrapper: (client guid, client sequence) + request body."""
    return TypeDescriptor(f"rpc/Request[{body.name}]", (
        ("client_guid", GUID_FIELD),
        ("seq", K.UINT64),
        ("body", body),
    ))


@lru_cache(maxsize=None)
def response_envelope(body: TypeDescriptor) -> TypeDescriptor:
    return TypeDescriptor(f"rpc/Response[{body.name}]", (
        ("client_guid", GUID_FIELD),
        ("seq", K.UINT64),
        ("ok", K.BOOL),
        ("error", K.STRING),
        ("body", body),
    ))


def service_topics(service_name: str) -> tuple:
    """Request and response topics carrying a fully-resolved service name."""
    return f"/svc{service_name}/request", f"/svc{service_name}/response"


ADD_TWO_INTS = ServiceType("example/AddTwoInts", builtin.ADD_TWO_INTS_REQUEST, builtin.ADD_TWO_INTS_RESPONSE)

SERVICE_TYPES = {ADD_TWO_INTS.name: ADD_TWO_INTS}


def register_service_type(service_type: ServiceType) -> ServiceType:
    SERVICE_TYPES[service_type.name] = service_type
    return service_type


class Service(Waitable):
    """Server side of a request-response channel.

    `callback(request) -> response` runs on the executor; a raised error
    becomes an error response for that request only.
    """

    def __init__(self, node, name: str, service_type: ServiceType, callback: Callable):
        self.node = node
        self.name = node.resolve(name)
        self.service_type = service_type
        self.callback = callback
        self.participant = node.participant
        self.handled = 0
        request_topic, response_topic = service_topics(self.name)
        self._responses = Publisher(node, response_topic, response_envelope(service_type.response), SERVICE_QOS)
        self._requests = Subscription(node, request_topic, request_envelope(service_type.request),
                                      SERVICE_QOS, self._on_request)
        self._requests.work_kind = WorkKind.SERVICE_REQUEST
        self.guid = self.participant.create_endpoint(
            EndpointKind.SERVICE_SERVER, self.name, service_type.name, service_type.type_hash,
            SERVICE_QOS, node.fqn,
        )
        logger.debug(f"Service {self.name} [{service_type.name}] ready")

    def _on_request(self, envelope) -> None:
        self.handled += 1
        try:
            response = coerce_message(self.service_type.response, self.callback(envelope.body))
            reply = {"client_guid": envelope.client_guid, "seq": envelope.seq, "ok": True, "error": "",
                     "body": response}
        except Exception as e:
            logger.exception(f"Service {self.name} failed on request {envelope.seq}: {e}")
            self.participant.diagnostics.increment("callback_errors")
            self.participant.diagnostics.add_error(self.name, f"Request {envelope.seq} failed: {e}",
                                                   impact="error response sent", quiet=True)
            reply = {"client_guid": envelope.client_guid, "seq": envelope.seq, "ok": False,
                     "error": f"{type(e).__name__}: {e}", "body": self.service_type.response.new()}
        self._responses.publish(reply)

    def collect(self, now: float) -> list:
        return self._requests.collect(now)

    def next_ready_time(self) -> Optional[float]:
        return self._requests.next_ready_time()

    def destroy(self) -> None:
        self._requests.destroy()
        self._responses.destroy()
        self.participant.remove_endpoint(self.guid)


class Client(Waitable):
    """Client side. Requests are correlated by (client guid, sequence);
    calls made before a server is matched are held and sent on match."""

    def __init__(self, node, name: str, service_type: ServiceType, timeout: Optional[float] = None):
        self.node = node
        self.name = node.resolve(name)
        self.service_type = service_type
        self.participant = node.participant
        self.clock = self.participant.clock
        self.timeout = float(timeout if timeout is not None else node.context.config.get("service_timeout", 5.0))
        self.guid = self.participant.create_endpoint(
            EndpointKind.SERVICE_CLIENT, self.name, service_type.name, service_type.type_hash,
            SERVICE_QOS, node.fqn,
        )
        self._seq = 0
        self._pending: dict = {}   # seq -> (future, deadline)
        self._unsent: list = []
        request_topic, response_topic = service_topics(self.name)
        self._requests = Publisher(node, request_topic, request_envelope(service_type.request), SERVICE_QOS)
        self._responses = Subscription(node, response_topic, response_envelope(service_type.response),
                                       SERVICE_QOS, self._on_response)
        self._responses.work_kind = WorkKind.SERVICE_RESPONSE

    @property
    def pending(self) -> int:
        return len(self._pending)

    def service_is_ready(self) -> bool:
        return self._requests.matched_count > 0 and self._responses.matched_count > 0

    def wait_for_service(self, executor, timeout: float = 5.0) -> bool:
        return executor.spin_until(self.service_is_ready, timeout)

    def call_async(self, request) -> Future:
        body = coerce_message(self.service_type.request, request)
        self._seq += 1
        future = Future()
        future.request_seq = self._seq
        self._pending[self._seq] = (future, self.clock.now() + self.timeout)
        envelope = {"client_guid": self.guid, "seq": self._seq, "body": body}
        if self.service_is_ready():
            self._requests.publish(envelope)
        else:
            self._unsent.append(envelope)
        return future

    def call(self, request, executor, timeout: Optional[float] = None):
        """Blocking convenience: spin `executor` until the response arrives."""
        future = self.call_async(request)
        executor.spin_until_future_complete(future, (timeout or self.timeout) + 1.0)
        if not future.done():
            raise ServiceTimeoutError(f"No response from {self.name}")
        return future.result()

    def _on_response(self, envelope) -> None:
        if envelope.client_guid != self.guid:
            return
        entry = self._pending.pop(envelope.seq, None)
        if entry is None:
            logger.debug(f"{self.name}: stale response for request {envelope.seq}")
            return
        future, _ = entry
        if envelope.ok:
            future.set_result(envelope.body)
        else:
            future.set_exception(ServiceCallError(envelope.error))

    def _flush(self) -> None:
        if self._unsent and self.service_is_ready():
            unsent, self._unsent = self._unsent, []
            for envelope in unsent:
                if envelope["seq"] in self._pending:
                    self._requests.publish(envelope)

    def _expire(self, future: Future, seq: int) -> Callable[[], None]:
        def run():
            future.set_exception(ServiceTimeoutError(
                f"Request {seq} to {self.name} timed out after {self.timeout}s"))
        return run

    def collect(self, now: float) -> list:
        self._flush()
        work = self._responses.collect(now)
        for seq, (future, deadline) in sorted(self._pending.items()):
            if now >= deadline:
                del self._pending[seq]
                work.append(ExecutorWorkItem(WorkKind.SERVICE_RESPONSE, self, now, self._expire(future, seq),
                                             label=f"{self.name}:timeout"))
        return work

    def next_ready_time(self) -> Optional[float]:
        times = [deadline for _, deadline in self._pending.values()]
        ready = self._responses.next_ready_time()
        if ready is not None:
            times.append(ready)
        return min(times) if times else None

    def destroy(self) -> None:
        for future, _ in self._pending.values():
            future.cancel()
        self._pending.clear()
        self._requests.destroy()
        self._responses.destroy()
        self.participant.remove_endpoint(self.guid)
