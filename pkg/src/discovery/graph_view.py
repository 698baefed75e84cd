import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from src.discovery.endpoints import EndpointInfo, EndpointKind, ParticipantAnnouncement
from src.discovery.matching import qos_compatible

logger = logging.getLogger(__name__)


class GraphEventKind(str, Enum):
    PARTICIPANT_DISCOVERED = "PARTICIPANT_DISCOVERED"
    PARTICIPANT_LOST = "PARTICIPANT_LOST"
    MATCHED = "MATCHED"
    UNMATCHED = "UNMATCHED"
    TYPE_MISMATCH = "TYPE_MISMATCH"
    INCOMPATIBLE_QOS = "INCOMPATIBLE_QOS"


@dataclass(frozen=True)
class GraphEvent:
    kind: GraphEventKind
    participant_guid: Optional[bytes] = None
    writer: Optional[EndpointInfo] = None
    reader: Optional[EndpointInfo] = None
    reasons: tuple = ()

    def describe(self) -> str:
        if self.writer is None:
            return f"{self.kind.value} {self.participant_guid.hex()}"
        text = f"{self.kind.value} {self.writer.topic_name} {self.writer.endpoint_guid.hex()} -> {self.reader.endpoint_guid.hex()}"
        if self.reasons:
            text += f" ({', '.join(r.value for r in self.reasons)})"
        return text


@dataclass
class ParticipantRecord:
    announcement: ParticipantAnnouncement
    last_heard: float
    address: tuple
    local: bool = False


@dataclass
class GraphView:
    """Everything this participant knows about the domain, itself included.

    `authorizer(participant_guid, announcement, endpoint) -> bool` filters
    remote endpoints before they can match.
    """

    local_guid: bytes
    authorizer: Optional[Callable] = None
    participants: dict = field(default_factory=dict)
    matched: set = field(default_factory=set)
    _pair_status: dict = field(default_factory=dict)

    # --- Updates ---

    def process_announcement(self, ann: ParticipantAnnouncement, now: float,
                             source: Optional[tuple] = None) -> list:
        guid = ann.participant_guid
        record = self.participants.get(guid)
        if record is not None and ann.announcement_seq <= record.announcement.announcement_seq:
            record.last_heard = max(record.last_heard, now)
            return []

        local = guid == self.local_guid
        if not local and self.authorizer is not None:
            allowed = tuple(e for e in ann.endpoints if self.authorizer(guid, ann, e))
            if len(allowed) != len(ann.endpoints):
                logger.warning(
                    f"Ignoring {len(ann.endpoints) - len(allowed)} unauthorized endpoint(s) "
                    f"from participant {guid.hex()}"
                )
                ann = ann.with_changes(endpoints=allowed)

        host = ann.host or (source[0] if source else "")
        events = []
        if record is None:
            events.append(GraphEvent(GraphEventKind.PARTICIPANT_DISCOVERED, participant_guid=guid))
            logger.info(f"Participant discovered: {guid.hex()} at {host}:{ann.port} nodes={list(ann.nodes)}")
        self.participants[guid] = ParticipantRecord(ann, now, (host, ann.port), local=local)
        return events + self._rematch()

    def remove_participant(self, guid: bytes) -> list:
        if self.participants.pop(guid, None) is None:
            return []
        logger.info(f"Participant lost: {guid.hex()}")
        return [GraphEvent(GraphEventKind.PARTICIPANT_LOST, participant_guid=guid)] + self._rematch()

    def expire_stale(self, now: float) -> list:
        """Drop remote participants silent for longer than their lease."""
        stale = sorted(
            guid for guid, rec in self.participants.items()
            if not rec.local and now - rec.last_heard > rec.announcement.lease_duration
        )
        events = []
        for guid in stale:
            del self.participants[guid]
            logger.info(f"Participant lease expired: {guid.hex()}")
            events.append(GraphEvent(GraphEventKind.PARTICIPANT_LOST, participant_guid=guid))
        if stale:
            events.extend(self._rematch())
        return events

    def _rematch(self) -> list:
        writers = [e for e in self.endpoints() if e.direction == EndpointKind.PUBLISHER]
        readers = [e for e in self.endpoints() if e.direction == EndpointKind.SUBSCRIPTION]
        status = {}
        for w in writers:
            for r in readers:
                if w.topic_name != r.topic_name:
                    continue
                pair = (w.endpoint_guid, r.endpoint_guid)
                if w.type_hash != r.type_hash:
                    status[pair] = (GraphEventKind.TYPE_MISMATCH, w, r, ())
                    continue
                ok, reasons = qos_compatible(w.qos, r.qos)
                kind = GraphEventKind.MATCHED if ok else GraphEventKind.INCOMPATIBLE_QOS
                status[pair] = (kind, w, r, tuple(reasons))

        events = []
        for pair in sorted(set(status) | set(self._pair_status)):
            old = self._pair_status.get(pair)
            new = status.get(pair)
            old_kind = old[0] if old else None
            new_kind = new[0] if new else None
            if old_kind == new_kind:
                continue
            if old_kind == GraphEventKind.MATCHED:
                _, w, r, _ = old
                events.append(GraphEvent(GraphEventKind.UNMATCHED, writer=w, reader=r))
                self.matched.discard(pair)
            if new is not None:
                kind, w, r, reasons = new
                events.append(GraphEvent(kind, writer=w, reader=r, reasons=reasons))
                if kind == GraphEventKind.MATCHED:
                    self.matched.add(pair)
                elif kind == GraphEventKind.TYPE_MISMATCH:
                    logger.warning(f"Type mismatch on {w.topic_name}: {w.type_name} vs {r.type_name}")
                else:
                    logger.warning(
                        f"Incompatible QoS on {w.topic_name}: {[x.value for x in reasons]}"
                    )
        self._pair_status = status
        return events

    # --- Queries ---

    def endpoints(self) -> list:
        out = []
        for guid in sorted(self.participants):
            out.extend(self.participants[guid].announcement.endpoints)
        return out

    def address_of(self, participant_guid: bytes) -> Optional[tuple]:
        record = self.participants.get(participant_guid)
        return record.address if record else None

    def remote_addresses(self) -> list:
        return [rec.address for guid, rec in sorted(self.participants.items()) if not rec.local]

    def node_names(self) -> list:
        names = set()
        for record in self.participants.values():
            names.update(record.announcement.nodes)
        return sorted(names)

    def topic_names_and_types(self) -> list:
        topics = {}
        for e in self.endpoints():
            if e.direction in (EndpointKind.PUBLISHER, EndpointKind.SUBSCRIPTION):
                topics.setdefault(e.topic_name, set()).add(e.type_name)
        return [(name, sorted(types)) for name, types in sorted(topics.items())]

    def service_names_and_types(self) -> list:
        services = {}
        for e in self.endpoints():
            if e.direction == EndpointKind.SERVICE_SERVER:
                services.setdefault(e.topic_name, set()).add(e.type_name)
        return [(name, sorted(types)) for name, types in sorted(services.items())]

    def endpoints_for(self, topic_name: str, direction: EndpointKind) -> list:
        return [e for e in self.endpoints() if e.topic_name == topic_name and e.direction == direction]

    def count(self, topic_name: str, direction: EndpointKind) -> int:
        return len(self.endpoints_for(topic_name, direction))

    def snapshot(self) -> dict:
        """Read-only copy safe to hand to other threads."""
        return {guid: rec.announcement for guid, rec in self.participants.items()}


def process_announcement(graph: GraphView, ann: ParticipantAnnouncement, now: float) -> list:
    return graph.process_announcement(ann, now)


def expire_stale(graph: GraphView, now: float) -> list:
    return graph.expire_stale(now)
