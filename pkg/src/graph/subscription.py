import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from src.discovery.endpoints import EndpointKind
from src.discovery.graph_view import GraphEvent, GraphEventKind
from src.graph.events import EndpointEvent, EventKind, ExecutorWorkItem, Waitable, WorkKind
from src.graph.participant import EndpointListener
from src.interfaces.serialization import deserialize
from src.interfaces.types import TypeDescriptor
from src.shared.errors import DecodeError
from src.transport.qos import Liveliness, QosProfile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MessageInfo:
    writer_guid: bytes
    source_timestamp: float
    received_at: float
    intra_process: bool


@dataclass(frozen=True)
class RawMessage:
    """A serialized message as seen by tooling endpoints."""

    topic: str
    type_name: str
    type_hash: int
    payload: bytes
    source_timestamp: float
    received_at: float
    writer_guid: bytes


@dataclass
class _MatchedWriter:
    qos: QosProfile
    intra: bool
    last_alive: float
    alive: bool = True


class _SubscriptionBase(EndpointListener, Waitable):
    """Queueing, QoS event tracking and callback dispatch shared by typed
    and raw subscriptions."""

    work_kind = WorkKind.MESSAGE

    def __init__(self, node, topic: str, qos: QosProfile, event_callbacks: Optional[dict] = None):
        self.node = node
        self.topic = topic
        self.qos = qos
        self.participant = node.context.participant
        self.clock = self.participant.clock
        self.event_callbacks = dict(event_callbacks or {})
        self.events: list = []
        self.received_count = 0
        self.expired_count = 0
        self.last_info: Optional[MessageInfo] = None
        self._queue = deque(maxlen=None if qos.keep_all else qos.depth)
        self._pending_events: deque = deque()
        self._writers: dict = {}
        self._deadline_start: Optional[float] = None
        self._in_callback = False
        self.guid = self.participant.new_endpoint_guid()

    # --- Queue ---

    def _enqueue(self, item, stamp: float, writer_guid: bytes, received_at: float, intra: bool) -> None:
        if self._queue.maxlen is not None and len(self._queue) == self._queue.maxlen:
            logger.debug(f"{self.topic}: queue full, oldest message replaced")
        self._queue.append((item, MessageInfo(writer_guid, stamp, received_at, intra)))
        writer = self._writers.get(writer_guid)
        if writer is not None:
            writer.last_alive = received_at
        self._deadline_start = received_at

    @property
    def queued(self) -> int:
        return len(self._queue)

    @property
    def matched_count(self) -> int:
        return len(self._writers)

    def _lifespan_for(self, writer_guid: bytes) -> Optional[float]:
        writer = self._writers.get(writer_guid)
        spans = [v for v in (self.qos.lifespan, writer.qos.lifespan if writer else None) if v is not None]
        return min(spans) if spans else None

    def _drop_expired(self, now: float) -> None:
        if self.qos.lifespan is None and not any(w.qos.lifespan for w in self._writers.values()):
            return
        kept = deque(maxlen=self._queue.maxlen)
        for item, info in self._queue:
            lifespan = self._lifespan_for(info.writer_guid)
            if lifespan is not None and now - info.source_timestamp > lifespan:
                self.expired_count += 1
                self.participant.diagnostics.increment("lifespan_expired")
                continue
            kept.append((item, info))
        self._queue = kept

    def take(self):
        """Pop the oldest live message without going through an executor."""
        self._drop_expired(self.clock.now())
        if not self._queue:
            return None
        item, info = self._queue.popleft()
        self.last_info = info
        return item

    # --- Events ---

    def _event(self, kind: EventKind, now: float, count: int = 1, peer_guid: Optional[bytes] = None,
               **detail) -> None:
        event = EndpointEvent(kind, self.topic, now, count=count, peer_guid=peer_guid, detail=detail)
        self.events.append(event)
        if kind in self.event_callbacks:
            self._pending_events.append(event)

    def events_of(self, kind: EventKind) -> list:
        return [e for e in self.events if e.kind == kind]

    def on_graph_event(self, event: GraphEvent, intra: bool) -> None:
        writer = event.writer
        now = self.clock.now()
        if event.kind == GraphEventKind.MATCHED:
            self._writers[writer.endpoint_guid] = _MatchedWriter(writer.qos, intra, now)
            if self._deadline_start is None:
                self._deadline_start = now
        elif event.kind == GraphEventKind.UNMATCHED:
            self._writers.pop(writer.endpoint_guid, None)
            if not self._writers:
                self._deadline_start = None
        self._event(EventKind(event.kind.value), now, peer_guid=writer.endpoint_guid,
                    reasons=[r.value for r in event.reasons])
        if event.kind in (GraphEventKind.MATCHED, GraphEventKind.UNMATCHED):
            self._liveliness_changed(now, writer.endpoint_guid)

    def on_sample_lost(self, count: int) -> None:
        self._event(EventKind.SAMPLE_LOST, self.clock.now(), count=count)

    def writer_alive(self, writer_guid: bytes, now: float) -> None:
        writer = self._writers.get(writer_guid)
        if writer is not None:
            writer.last_alive = max(writer.last_alive, now)

    def _liveliness_changed(self, now: float, writer_guid: bytes) -> None:
        alive = sum(1 for w in self._writers.values() if w.alive)
        self._event(EventKind.LIVELINESS_CHANGED, now, peer_guid=writer_guid,
                    alive_count=alive, not_alive_count=len(self._writers) - alive)

    def _check_liveliness(self, now: float) -> None:
        state = self.participant.reader_state(self.guid)
        for guid, writer in sorted(self._writers.items()):
            if writer.qos.liveliness != Liveliness.MANUAL:
                continue
            if state is not None and guid in state.writers:
                writer.last_alive = max(writer.last_alive, state.writers[guid].last_alive)
            alive = now - writer.last_alive <= writer.qos.lease_duration
            if alive != writer.alive:
                writer.alive = alive
                logger.info(f"{self.topic}: writer {guid.hex()} {'alive' if alive else 'not alive'}")
                self._liveliness_changed(now, guid)

    def _check_deadline(self, now: float) -> None:
        deadline = self.qos.deadline
        if deadline is None or self._deadline_start is None:
            return
        missed = int((now - self._deadline_start) // deadline)
        if missed > 0:
            self._deadline_start += missed * deadline
            self._event(EventKind.DEADLINE_MISSED, now, count=missed)

    # --- Executor ---

    def next_ready_time(self) -> Optional[float]:
        if self._queue or self._pending_events:
            return self.clock.now()
        if self.qos.deadline is not None and self._deadline_start is not None:
            return self._deadline_start + self.qos.deadline
        return None

    def collect(self, now: float) -> list:
        self._check_deadline(now)
        self._check_liveliness(now)
        self._drop_expired(now)
        work = []
        while self._pending_events:
            event = self._pending_events.popleft()
            work.append(ExecutorWorkItem(WorkKind.EVENT, self, now, self._event_runner(event),
                                         label=f"{self.topic}:{event.kind.value}"))
        while self._queue:
            item, info = self._queue.popleft()
            work.append(ExecutorWorkItem(self.work_kind, self, now, self._message_runner(item, info),
                                         label=self.topic))
        return work

    def _event_runner(self, event: EndpointEvent) -> Callable[[], None]:
        return lambda: self.event_callbacks[event.kind](event)

    def _message_runner(self, item, info: MessageInfo) -> Callable[[], None]:
        def run():
            if self._in_callback:
                raise RuntimeError(f"Overlapping callbacks on subscription {self.topic}")
            self._in_callback = True
            try:
                self.last_info = info
                self.received_count += 1
                self._dispatch(item)
            finally:
                self._in_callback = False
        return run

    def _dispatch(self, item) -> None:
        raise NotImplementedError

    def destroy(self) -> None:
        self.participant.remove_endpoint(self.guid)
        self.node.context.unregister_subscription(self.guid)
        self._queue.clear()
        self._writers.clear()


class Subscription(_SubscriptionBase):
    """Typed subscription. Remote samples are deserialized on arrival;
    intra-process publishers hand over the message value itself."""

    def __init__(self, node, topic: str, descriptor: TypeDescriptor, qos: QosProfile,
                 callback: Callable, event_callbacks: Optional[dict] = None):
        super().__init__(node, topic, qos, event_callbacks)
        self.descriptor = descriptor
        self.callback = callback
        self.decode_errors = 0
        node.context.register_subscription(self.guid, self)
        self.participant.create_endpoint(
            EndpointKind.SUBSCRIPTION, topic, descriptor.name, descriptor.type_hash, qos, node.fqn, self,
            guid=self.guid,
        )

    def on_samples(self, samples: list) -> None:
        for sample in samples:
            try:
                value = deserialize(sample.payload, self.descriptor)
            except DecodeError as e:
                self.decode_errors += 1
                self.participant.diagnostics.increment("decode_errors")
                logger.warning(f"{self.topic}: undecodable sample {sample.seq} from "
                               f"{sample.writer_guid.hex()}: {e}")
                continue
            self._enqueue(value, sample.source_timestamp, sample.writer_guid, sample.received_at, False)

    def enqueue_value(self, value, stamp: float, writer_guid: bytes) -> None:
        self._enqueue(value, stamp, writer_guid, self.clock.now(), True)

    def _dispatch(self, value) -> None:
        self.callback(value)


class RawSubscription(_SubscriptionBase):
    """Receives serialized payloads for a (type name, type hash) that need
    not be known locally. Always takes the network path."""

    def __init__(self, node, topic: str, type_name: str, type_hash: int, qos: QosProfile,
                 callback: Callable[[RawMessage], None], event_callbacks: Optional[dict] = None):
        super().__init__(node, topic, qos, event_callbacks)
        self.type_name = type_name
        self.type_hash = type_hash
        self.callback = callback
        node.context.register_subscription(self.guid, self)
        self.participant.create_endpoint(
            EndpointKind.SUBSCRIPTION, topic, type_name, type_hash, qos, node.fqn, self,
            intra_capable=False, guid=self.guid,
        )

    def on_samples(self, samples: list) -> None:
        for sample in samples:
            raw = RawMessage(self.topic, self.type_name, self.type_hash, sample.payload,
                             sample.source_timestamp, sample.received_at, sample.writer_guid)
            self._enqueue(raw, sample.source_timestamp, sample.writer_guid, sample.received_at, False)

    def _dispatch(self, raw: RawMessage) -> None:
        self.callback(raw)
