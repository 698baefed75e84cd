import logging
from collections import deque
from typing import Callable, Optional

from src.discovery.endpoints import EndpointKind
from src.discovery.graph_view import GraphEvent, GraphEventKind
from src.graph.events import EndpointEvent, EventKind
from src.graph.participant import EndpointListener
from src.interfaces.serialization import coerce_message, serialize
from src.interfaces.types import TypeDescriptor
from src.transport.qos import QosProfile

logger = logging.getLogger(__name__)


class Publisher(EndpointListener):
    """Typed publisher.

    Same-process subscriptions matched over the intra-process path get the
    immutable message value itself; the message is serialized only when a
    reader outside that path is matched. Transient-local publishers keep a
    value history so late joiners on either path get the last `depth`
    messages.
    """

    def __init__(self, node, topic: str, descriptor: TypeDescriptor, qos: QosProfile,
                 gate: Optional[Callable[[], bool]] = None):
        self.node = node
        self.topic = topic
        self.descriptor = descriptor
        self.qos = qos
        self.gate = gate
        self.participant = node.context.participant
        self.serialization_count = 0
        self.published_count = 0
        self.dropped_count = 0
        self.events: list = []
        self._intra: dict = {}
        self._remote_readers: set = set()
        # (value, source_timestamp, serialized) for transient-local late joiners
        self._history = deque(maxlen=None if qos.keep_all else qos.depth) if qos.transient_local else None
        self.guid = self.participant.new_endpoint_guid()
        self.participant.create_endpoint(
            EndpointKind.PUBLISHER, topic, descriptor.name, descriptor.type_hash, qos, node.fqn, self,
            guid=self.guid,
        )

    @property
    def matched_count(self) -> int:
        return len(self._intra) + len(self._remote_readers)

    def publish(self, message) -> bool:
        """Returns False when the message was dropped by an inactive lifecycle."""
        value = coerce_message(self.descriptor, message)
        if self.gate is not None and not self.gate():
            self.dropped_count += 1
            self.participant.diagnostics.increment("lifecycle_drops")
            return False
        now = self.participant.clock.now()
        self.published_count += 1
        for subscription in list(self._intra.values()):
            subscription.enqueue_value(value, now, self.guid)
        serialized = False
        if self._remote_readers:
            self._send(value, now)
            serialized = True
        if self._history is not None:
            self._history.append((value, now, serialized))
        return True

    def _send(self, value, stamp: float) -> None:
        payload = serialize(value)
        self.serialization_count += 1
        self.participant.diagnostics.increment("serializations")
        self.participant.publish(self.guid, payload, source_timestamp=stamp)

    def assert_liveliness(self) -> None:
        now = self.participant.clock.now()
        for subscription in self._intra.values():
            subscription.writer_alive(self.guid, now)
        self.participant.assert_liveliness(self.guid)

    def on_graph_event(self, event: GraphEvent, intra: bool) -> None:
        reader = event.reader
        if event.kind == GraphEventKind.MATCHED:
            if intra:
                subscription = self.node.context.subscription(reader.endpoint_guid)
                if subscription is not None:
                    self._intra[reader.endpoint_guid] = subscription
                    if self._history is not None and reader.qos.transient_local:
                        for value, stamp, _ in self._history:
                            subscription.enqueue_value(value, stamp, self.guid)
            else:
                self._backfill()
                self._remote_readers.add(reader.endpoint_guid)
        elif event.kind == GraphEventKind.UNMATCHED:
            self._intra.pop(reader.endpoint_guid, None)
            self._remote_readers.discard(reader.endpoint_guid)
        now = self.participant.clock.now()
        kind = EventKind(event.kind.value)
        self.events.append(EndpointEvent(kind, self.topic, now, peer_guid=reader.endpoint_guid,
                                         detail={"reasons": [r.value for r in event.reasons]}))

    def _backfill(self) -> None:
        """Hand values published while only intra-process readers existed
        to the transport writer so its history is complete."""
        if self._history is None:
            return
        pending = [(i, v, s) for i, (v, s, done) in enumerate(self._history) if not done]
        for index, value, stamp in pending:
            self._send(value, stamp)
            self._history[index] = (value, stamp, True)

    def destroy(self) -> None:
        self.participant.remove_endpoint(self.guid)
        self._intra.clear()
        self._remote_readers.clear()


class RawPublisher(EndpointListener):
    """Publishes pre-serialized payloads under a given type name and hash."""

    def __init__(self, node, topic: str, type_name: str, type_hash: int, qos: QosProfile):
        self.node = node
        self.topic = topic
        self.type_name = type_name
        self.type_hash = type_hash
        self.qos = qos
        self.participant = node.context.participant
        self._readers: set = set()
        self.published_count = 0
        self.guid = self.participant.new_endpoint_guid()
        self.participant.create_endpoint(
            EndpointKind.PUBLISHER, topic, type_name, type_hash, qos, node.fqn, self,
            intra_capable=False, guid=self.guid,
        )

    @property
    def matched_count(self) -> int:
        return len(self._readers)

    def on_graph_event(self, event: GraphEvent, intra: bool) -> None:
        if event.kind == GraphEventKind.MATCHED:
            self._readers.add(event.reader.endpoint_guid)
        elif event.kind == GraphEventKind.UNMATCHED:
            self._readers.discard(event.reader.endpoint_guid)

    def publish(self, payload: bytes, source_timestamp: Optional[float] = None) -> None:
        self.published_count += 1
        self.participant.publish(self.guid, bytes(payload), source_timestamp=source_timestamp)

    def destroy(self) -> None:
        self.participant.remove_endpoint(self.guid)
