import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from src.discovery.announcer import Announcer, DiscoverySubtype, encode_discovery, split_discovery
from src.discovery.endpoints import (
    EndpointInfo, EndpointKind, ParticipantAnnouncement, decode_announcement,
    encode_announcement, participant_guid_of,
)
from src.discovery.graph_view import GraphEvent, GraphEventKind, GraphView
from src.interfaces.type_hash import compute_topic_id
from src.shared.config import static_peer_list
from src.shared.diagnostics import Diagnostics
from src.shared.errors import (
    AuthenticationError, DecodeError, ForeignPacketError, HandshakeError,
    NameConflictError, ReplayError,
)
from src.transport.packet import (
    GUID_PREFIX_SIZE, GUID_SIZE, HEADER_SIZE, PacketKind, decode_header, decode_packet,
    unpack_acknack, unpack_heartbeat,
)
from src.transport.base import ImpairedTransport
from src.transport.qos import QosProfile
from src.transport.reader import ReaderOutput, ReaderState
from src.transport.writer import WriterState

logger = logging.getLogger(__name__)


class EndpointListener:
    """Callbacks the graph layer receives from the participant."""

    def on_graph_event(self, event: GraphEvent, intra: bool) -> None:
        pass

    def on_samples(self, samples: list) -> None:
        pass

    def on_sample_lost(self, count: int) -> None:
        pass


@dataclass
class LocalEndpoint:
    info: EndpointInfo
    listener: EndpointListener
    state: object = None
    topic_id: int = 0
    peers: set = field(default_factory=set)
    intra_capable: bool = True


class Participant:
    """Owns the transport, the graph view and every local endpoint's
    protocol state. All mutation happens in `tick`, on the executor's
    thread; only the socket receive threads run elsewhere."""

    def __init__(self, config: dict, clock, transport, security=None, diagnostics: Optional[Diagnostics] = None):
        self.config = config
        self.clock = clock
        self.transport = transport
        self.security = security
        self.prefix = os.urandom(GUID_PREFIX_SIZE)
        self.guid = self.prefix + bytes(GUID_SIZE - GUID_PREFIX_SIZE)
        self.diagnostics = diagnostics or Diagnostics(f"participant-{self.guid[:4].hex()}")
        self._reported: set = set()
        if isinstance(transport, ImpairedTransport):
            transport.diagnostics = self.diagnostics
        self.intra_process = bool(config.get("intra_process", True))
        self.lease_duration = float(config.get("lease_duration", 3.0))

        self.graph = GraphView(self.guid, authorizer=security.authorizer if security else None)
        self.announcer = Announcer(float(config.get("announce_period", 1.0)), static_peer_list(config))
        if security is not None:
            security.bind(self.guid)

        self.nodes: set = set()
        self.writers: dict = {}
        self.readers: dict = {}
        self.info_endpoints: dict = {}
        self._routes = defaultdict(set)   # remote writer guid -> local reader guids
        self._deferred = defaultdict(list)  # remote participant guid -> MATCHED events awaiting a session
        self._next_entity = 1
        self._announcement_seq = 0
        self._announcement: Optional[ParticipantAnnouncement] = None
        self._encoded_announcement: Optional[bytes] = None
        self.closed = False
        self._local_changed()
        logger.info(
            f"Participant {self.guid.hex()} up on {self.transport.local_address} "
            f"(domain {config.get('domain_id', 0)}, security={'on' if security else 'off'})"
        )

    # --- Local graph ---

    def new_endpoint_guid(self) -> bytes:
        entity = self._next_entity
        self._next_entity += 1
        return self.prefix + entity.to_bytes(GUID_SIZE - GUID_PREFIX_SIZE, "big")

    def add_node(self, fqn: str) -> None:
        if fqn in self.nodes or fqn in self.graph.node_names():
            raise NameConflictError(f"Node name {fqn} is already in use")
        self.nodes.add(fqn)
        self._local_changed()

    def remove_node(self, fqn: str) -> None:
        self.nodes.discard(fqn)
        for guid in [g for g, ep in self._all_local() if ep.info.owning_node == fqn]:
            self.remove_endpoint(guid)
        self._local_changed()

    def _all_local(self):
        for table in (self.writers, self.readers, self.info_endpoints):
            yield from list(table.items())

    def create_endpoint(self, direction: EndpointKind, topic_name: str, type_name: str, type_hash: int,
                        qos: QosProfile, node: str, listener: Optional[EndpointListener] = None,
                        intra_capable: bool = True, guid: Optional[bytes] = None) -> bytes:
        """Register a local endpoint and announce it. Matching runs before
        this returns, so listeners must be ready for events."""
        if self.security is not None:
            self.security.check_local(direction, topic_name)
        guid = guid or self.new_endpoint_guid()
        info = EndpointInfo(direction, topic_name, type_name, type_hash, qos, guid, node)
        endpoint = LocalEndpoint(info, listener or EndpointListener(),
                                 topic_id=compute_topic_id(topic_name, type_hash),
                                 intra_capable=intra_capable)
        if direction == EndpointKind.PUBLISHER:
            endpoint.state = WriterState(
                guid, endpoint.topic_id, qos,
                fragment_size=int(self.config.get("fragment_size", 1200)),
                high_water=int(self.config.get("keep_all_high_water", 64 * 1024 * 1024)),
                heartbeat_period=float(self.config.get("heartbeat_period", 0.1)),
            )
            self.writers[guid] = endpoint
        elif direction == EndpointKind.SUBSCRIPTION:
            endpoint.state = ReaderState(
                guid, endpoint.topic_id, qos,
                reassembly_timeout=float(self.config.get("reassembly_timeout", 2.0)),
            )
            self.readers[guid] = endpoint
        else:
            self.info_endpoints[guid] = endpoint
        logger.debug(f"Created {direction.name} {guid.hex()} on {topic_name} [{type_name}]")
        self._local_changed()
        return guid

    def remove_endpoint(self, guid: bytes) -> None:
        for table in (self.writers, self.readers, self.info_endpoints):
            if table.pop(guid, None) is not None:
                for routes in self._routes.values():
                    routes.discard(guid)
                self._local_changed()
                return

    def _local_changed(self) -> None:
        self._announcement_seq += 1
        host, port = self.transport.local_address[0], self.transport.local_address[1]
        if self.config.get("unicast_host"):
            host = self.config["unicast_host"]
        ann = ParticipantAnnouncement(
            participant_guid=self.guid,
            host=str(host),
            port=int(port),
            nodes=tuple(sorted(self.nodes)),
            endpoints=tuple(ep.info for _, ep in self._all_local()),
            lease_duration=self.lease_duration,
            announcement_seq=self._announcement_seq,
        )
        if self.security is not None:
            ann = self.security.sign_announcement(ann)
        self._announcement = ann
        self._encoded_announcement = None
        self.announcer.mark_changed()
        self._handle_events(self.graph.process_announcement(ann, self.clock.now(), self.transport.local_address))

    @property
    def announcement(self) -> ParticipantAnnouncement:
        return self._announcement

    def _announcement_datagram(self, changed: bool) -> bytes:
        if self._encoded_announcement is None:
            self._encoded_announcement = encode_discovery(
                self.guid, DiscoverySubtype.ANNOUNCE, encode_announcement(self._announcement),
                seq=self._announcement_seq,
            )
        return self._encoded_announcement

    # --- Data path ---

    def publish(self, writer_guid: bytes, payload: bytes, source_timestamp: Optional[float] = None) -> int:
        """Hand a serialized message to the writer and emit it once to every
        matched remote participant. Returns the number of participants."""
        endpoint = self.writers[writer_guid]
        datagrams = endpoint.state.publish(payload, self.clock.now(), source_timestamp)
        targets = sorted({participant_guid_of(r) for r in endpoint.peers})
        for participant in targets:
            for datagram in datagrams:
                self._send(datagram, participant)
        return len(targets)

    def assert_liveliness(self, writer_guid: bytes) -> None:
        endpoint = self.writers[writer_guid]
        datagram = endpoint.state.liveliness_heartbeat()
        for participant in sorted({participant_guid_of(r) for r in endpoint.peers}):
            self._send(datagram, participant)

    def reader_state(self, reader_guid: bytes) -> Optional[ReaderState]:
        endpoint = self.readers.get(reader_guid)
        return endpoint.state if endpoint else None

    def _send(self, datagram: bytes, participant: bytes) -> None:
        if participant == self.guid:
            self.transport.send(datagram, self.transport.local_address)
            return
        address = self.graph.address_of(participant)
        if address is None:
            return
        if self.security is not None:
            sealed = self.security.seal(datagram, participant)
            if sealed is None:
                self.diagnostics.increment("no_session_drops")
                return
            datagram = sealed
        self.transport.send(datagram, address)

    # --- Matching ---

    def _handle_events(self, events: list) -> None:
        for event in events:
            if event.kind == GraphEventKind.PARTICIPANT_DISCOVERED:
                self._start_handshake(event.participant_guid)
            elif event.kind == GraphEventKind.PARTICIPANT_LOST:
                self._deferred.pop(event.participant_guid, None)
                if self.security is not None:
                    self.security.forget(event.participant_guid)
            elif event.kind == GraphEventKind.MATCHED:
                self._on_matched(event)
            elif event.kind == GraphEventKind.UNMATCHED:
                self._on_unmatched(event)
            else:
                self._notify(event, intra=False)

    def _notify(self, event: GraphEvent, intra: bool) -> None:
        for guid in (event.writer.endpoint_guid, event.reader.endpoint_guid):
            endpoint = self.writers.get(guid) or self.readers.get(guid)
            if endpoint is not None:
                endpoint.listener.on_graph_event(event, intra)

    def _is_intra(self, local_w, local_r) -> bool:
        return (self.intra_process and local_w is not None and local_r is not None
                and local_w.intra_capable and local_r.intra_capable)

    def _on_matched(self, event: GraphEvent) -> None:
        w, r = event.writer, event.reader
        local_w, local_r = self.writers.get(w.endpoint_guid), self.readers.get(r.endpoint_guid)
        if local_w is None and local_r is None:
            return
        intra = self._is_intra(local_w, local_r)
        remote = r.participant_guid if local_r is None else w.participant_guid
        if not intra and remote != self.guid and self.security is not None and not self.security.has_session(remote):
            self._deferred[remote].append(event)
            return
        now = self.clock.now()
        if local_w is not None:
            local_w.listener.on_graph_event(event, intra)
            if not intra:
                local_w.peers.add(r.endpoint_guid)
                for datagram in local_w.state.add_reader(r.endpoint_guid, r.qos, now):
                    self._send(datagram, r.participant_guid)
        if local_r is not None:
            if not intra:
                local_r.state.add_writer(w.endpoint_guid, w.qos, now)
                local_r.peers.add(w.endpoint_guid)
                self._routes[w.endpoint_guid].add(r.endpoint_guid)
            local_r.listener.on_graph_event(event, intra)
        logger.info(f"Matched {w.topic_name}: {w.endpoint_guid.hex()} -> {r.endpoint_guid.hex()}"
                    f"{' (intra-process)' if intra else ''}")

    def _on_unmatched(self, event: GraphEvent) -> None:
        w, r = event.writer, event.reader
        local_w, local_r = self.writers.get(w.endpoint_guid), self.readers.get(r.endpoint_guid)
        for pending in self._deferred.values():
            if any(p.writer.endpoint_guid == w.endpoint_guid and p.reader.endpoint_guid == r.endpoint_guid
                   for p in pending):
                pending[:] = [p for p in pending if not (p.writer.endpoint_guid == w.endpoint_guid
                                                         and p.reader.endpoint_guid == r.endpoint_guid)]
                return
        intra = self._is_intra(local_w, local_r)
        if local_w is not None:
            local_w.peers.discard(r.endpoint_guid)
            local_w.state.remove_reader(r.endpoint_guid)
            local_w.listener.on_graph_event(event, intra)
        if local_r is not None:
            local_r.peers.discard(w.endpoint_guid)
            local_r.state.remove_writer(w.endpoint_guid)
            self._routes[w.endpoint_guid].discard(r.endpoint_guid)
            local_r.listener.on_graph_event(event, intra)

    def _start_handshake(self, remote_guid: bytes) -> None:
        if self.security is None or remote_guid == self.guid:
            return
        request = self.security.handshake_request(remote_guid, self.clock.now())
        if request is not None:
            address = self.graph.address_of(remote_guid)
            if address is not None:
                self.transport.send(encode_discovery(self.guid, DiscoverySubtype.HANDSHAKE_REQUEST, request), address)

    def _session_ready(self, remote_guid: bytes) -> None:
        pending = self._deferred.pop(remote_guid, [])
        live = [e for e in pending if (e.writer.endpoint_guid, e.reader.endpoint_guid) in self.graph.matched]
        if live:
            logger.debug(f"Applying {len(live)} deferred match(es) for {remote_guid.hex()}")
        self._handle_events(live)

    # --- Receive path ---

    def tick(self, timeout: float = 0.0) -> int:
        """Drain received datagrams (waiting up to `timeout` for the first)
        and run protocol timers. Returns the number of datagrams handled."""
        if self.closed:
            return 0
        received = self.transport.receive(timeout)
        for datagram, source in received:
            self._on_datagram(datagram, source)
        self._run_timers(self.clock.now())
        return len(received)

    def _run_timers(self, now: float) -> None:
        for endpoint in list(self.writers.values()):
            for datagram in endpoint.state.heartbeat_tick(now):
                target = unpack_heartbeat(datagram[HEADER_SIZE:])[0]
                self._send(datagram, participant_guid_of(target))
        for endpoint in list(self.readers.values()):
            expired = endpoint.state.expire(now)
            if expired:
                self.diagnostics.increment("reassembly_timeouts", expired)
        for datagram, address in self.announcer.announce_tick(now, self._announcement_datagram,
                                                               self.graph.remote_addresses()):
            if address is None:
                self.transport.send_discovery(datagram)
            else:
                self.transport.send(datagram, address)
        self._handle_events(self.graph.expire_stale(now))
        if self.security is not None:
            for guid, record in list(self.graph.participants.items()):
                if not record.local:
                    self._start_handshake(guid)

    def _on_datagram(self, datagram: bytes, source: tuple) -> None:
        try:
            header = decode_header(datagram)
        except ForeignPacketError:
            self.diagnostics.increment("foreign_packets")
            return
        except DecodeError as e:
            self.diagnostics.increment("decode_errors")
            logger.debug(f"Undecodable datagram from {source}: {e}")
            return
        try:
            if header.kind == PacketKind.DISCOVERY:
                self._on_discovery(datagram, source)
                return
            if header.sender_prefix != self.prefix:
                if self.security is not None:
                    datagram = self.security.open(datagram)
                elif header.encrypted:
                    self.diagnostics.increment("auth_failures")
                    self._report_once(("sealed", source), "warning",
                                      f"Sealed datagram from {source} while security is off")
                    return
            header, payload = decode_packet(datagram)
            self._dispatch(header, payload)
        except ReplayError as e:
            self.diagnostics.increment("replays_rejected")
            self.diagnostics.add_error("security", f"Replay from {source} rejected: {e}",
                                       impact="datagram dropped")
        except AuthenticationError as e:
            self.diagnostics.increment("auth_failures")
            self.diagnostics.add_warning(f"Unauthenticated datagram from {source}: {e}", service="security")
        except DecodeError as e:
            self.diagnostics.increment("decode_errors")
            logger.debug(f"Bad {header.kind.name} from {source}: {e}")

    def _dispatch(self, header, payload: bytes) -> None:
        now = self.clock.now()
        if header.kind == PacketKind.ACKNACK:
            target, base, bitmap = unpack_acknack(payload)
            endpoint = self.writers.get(target)
            if endpoint is not None:
                for datagram in endpoint.state.on_acknack(header.writer_guid, base, bitmap, now):
                    self._send(datagram, participant_guid_of(header.writer_guid))
            return
        for reader_guid in sorted(self._routes.get(header.writer_guid, ())):
            endpoint = self.readers.get(reader_guid)
            if endpoint is None or endpoint.topic_id != header.topic_id:
                continue
            if header.kind == PacketKind.DATA:
                out = endpoint.state.on_data(header, payload, now)
            else:
                out = endpoint.state.on_heartbeat(header, payload, now)
            self._reader_output(endpoint, header.writer_guid, out)

    def _reader_output(self, endpoint: LocalEndpoint, writer_guid: bytes, out: ReaderOutput) -> None:
        if out.expired:
            self.diagnostics.increment("lifespan_expired", out.expired)
        if out.lost:
            self.diagnostics.increment("samples_lost", out.lost)
            endpoint.listener.on_sample_lost(out.lost)
        if out.messages:
            endpoint.listener.on_samples(out.messages)
        for datagram in out.datagrams:
            self._send(datagram, participant_guid_of(writer_guid))

    def _on_discovery(self, datagram: bytes, source: tuple) -> None:
        header, payload = decode_packet(datagram)
        if header.writer_guid == self.guid:
            return
        subtype, body = split_discovery(payload)
        now = self.clock.now()
        if subtype == DiscoverySubtype.ANNOUNCE:
            ann = decode_announcement(body)
            if self.security is not None:
                if not ann.secured:
                    self.diagnostics.increment("downgrade_rejected")
                    self._report_once(("downgrade", ann.participant_guid), "error",
                                      f"Rejected downgrade: unsigned announcement from {ann.participant_guid.hex()}")
                    return
                try:
                    self.security.verify_announcement(ann, now)
                except AuthenticationError as e:
                    self.diagnostics.increment("auth_failures")
                    self._report_once(("announce", ann.participant_guid), "error",
                                      f"Rejected announcement from {ann.participant_guid.hex()}: {e}")
                    return
            elif ann.secured:
                self.diagnostics.increment("downgrade_rejected")
                self._report_once(("secured", ann.participant_guid), "warning",
                                  f"Ignoring secured participant {ann.participant_guid.hex()} (security off)")
                return
            self._handle_events(self.graph.process_announcement(ann, now, source))
            return
        if self.security is None:
            return
        try:
            if subtype == DiscoverySubtype.HANDSHAKE_REQUEST:
                reply, remote = self.security.on_handshake_request(body, now)
                self.transport.send(encode_discovery(self.guid, DiscoverySubtype.HANDSHAKE_REPLY, reply), source)
            else:
                remote = self.security.on_handshake_reply(body, now)
        except HandshakeError as e:
            self.diagnostics.increment("auth_failures")
            self._report_once(("handshake", source), "error", f"Handshake from {source} rejected: {e}")
            return
        self._session_ready(remote)

    def _report_once(self, key: tuple, level: str, message: str) -> None:
        # repeated announcements and handshake retries are counted, not re-reported
        if key in self._reported:
            return
        self._reported.add(key)
        if level == "error":
            self.diagnostics.add_error("security", message, impact="peer not matched")
        else:
            self.diagnostics.add_warning(message, service="security")

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.transport.close()
        self.diagnostics.finalize()
