import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum

from src.interfaces.serialization import deserialize, serialize
from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor
from src.shared.config import LEASE_DURATION
from src.shared.errors import DecodeError, SchemaError, ValidationError
from src.transport.packet import GUID_PREFIX_SIZE, GUID_SIZE
from src.transport.qos import Durability, HistoryKind, Liveliness, QosProfile, Reliability

logger = logging.getLogger(__name__)


class EndpointKind(IntEnum):
    PUBLISHER = 0
    SUBSCRIPTION = 1
    SERVICE_SERVER = 2
    SERVICE_CLIENT = 3


def participant_guid_of(guid: bytes) -> bytes:
    """Participant guid = endpoint prefix + four zero bytes."""
    return bytes(guid[:GUID_PREFIX_SIZE]) + bytes(GUID_SIZE - GUID_PREFIX_SIZE)


@dataclass(frozen=True)
class EndpointInfo:
    direction: EndpointKind
    topic_name: str
    type_name: str
    type_hash: int
    qos: QosProfile
    endpoint_guid: bytes
    owning_node: str

    def __post_init__(self):
        if not self.topic_name:
            raise ValidationError("Endpoint topic_name must be non-empty")
        if len(self.endpoint_guid) != GUID_SIZE:
            raise ValidationError(f"Endpoint guid must be {GUID_SIZE} bytes")

    @property
    def participant_guid(self) -> bytes:
        return participant_guid_of(self.endpoint_guid)

    @property
    def is_writer(self) -> bool:
        return self.direction == EndpointKind.PUBLISHER

    @property
    def is_reader(self) -> bool:
        return self.direction == EndpointKind.SUBSCRIPTION


@dataclass(frozen=True)
class ParticipantAnnouncement:
    """Full snapshot of one participant's nodes and endpoints.

    `certificate`, `permissions` and `signature` are empty for unsecured
    participants.
    """

    participant_guid: bytes
    host: str
    port: int
    nodes: tuple = ()
    endpoints: tuple = ()
    lease_duration: float = LEASE_DURATION
    announcement_seq: int = 1
    certificate: bytes = b""
    permissions: bytes = b""
    signature: bytes = b""

    @property
    def secured(self) -> bool:
        return bool(self.certificate)

    @property
    def address(self) -> tuple:
        return (self.host, self.port)

    def with_changes(self, **changes) -> "ParticipantAnnouncement":
        return replace(self, **changes)


# Endpoint lists travel column-wise so the announcement is one flat message
# of primitive arrays. Absent deadline/lifespan travel as 0.0.
ANNOUNCEMENT_TYPE = TypeDescriptor("minibus/ParticipantAnnouncement", (
    ("participant_guid", ArrayType(K.UINT8, GUID_SIZE)),
    ("host", K.STRING),
    ("port", K.UINT16),
    ("lease_duration", K.FLOAT64),
    ("announcement_seq", K.UINT64),
    ("nodes", ArrayType(K.STRING)),
    ("directions", ArrayType(K.UINT8)),
    ("topic_names", ArrayType(K.STRING)),
    ("type_names", ArrayType(K.STRING)),
    ("type_hashes", ArrayType(K.UINT64)),
    ("reliability", ArrayType(K.UINT8)),
    ("durability", ArrayType(K.UINT8)),
    ("history", ArrayType(K.UINT8)),
    ("depth", ArrayType(K.UINT32)),
    ("deadline", ArrayType(K.FLOAT64)),
    ("lifespan", ArrayType(K.FLOAT64)),
    ("liveliness", ArrayType(K.UINT8)),
    ("lease", ArrayType(K.FLOAT64)),
    ("endpoint_guids", ArrayType(K.UINT8)),
    ("owning_nodes", ArrayType(K.STRING)),
    ("certificate", ArrayType(K.UINT8)),
    ("permissions", ArrayType(K.UINT8)),
    ("signature", ArrayType(K.UINT8)),
))


def encode_announcement(ann: ParticipantAnnouncement, include_signature: bool = True) -> bytes:
    eps = ann.endpoints
    message = ANNOUNCEMENT_TYPE.new(
        participant_guid=ann.participant_guid,
        host=ann.host,
        port=ann.port,
        lease_duration=float(ann.lease_duration),
        announcement_seq=ann.announcement_seq,
        nodes=tuple(ann.nodes),
        directions=bytes(int(e.direction) for e in eps),
        topic_names=tuple(e.topic_name for e in eps),
        type_names=tuple(e.type_name for e in eps),
        type_hashes=tuple(e.type_hash for e in eps),
        reliability=bytes(int(e.qos.reliability) for e in eps),
        durability=bytes(int(e.qos.durability) for e in eps),
        history=bytes(int(e.qos.history) for e in eps),
        depth=tuple(e.qos.depth for e in eps),
        deadline=tuple(e.qos.deadline or 0.0 for e in eps),
        lifespan=tuple(e.qos.lifespan or 0.0 for e in eps),
        liveliness=bytes(int(e.qos.liveliness) for e in eps),
        lease=tuple(float(e.qos.lease_duration) for e in eps),
        endpoint_guids=b"".join(e.endpoint_guid for e in eps),
        owning_nodes=tuple(e.owning_node for e in eps),
        certificate=ann.certificate,
        permissions=ann.permissions,
        signature=ann.signature if include_signature else b"",
    )
    return serialize(message)


def signed_bytes(ann: ParticipantAnnouncement) -> bytes:
    """The bytes an announcement signature covers: the encoding with an
    empty signature field."""
    return encode_announcement(ann, include_signature=False)


def decode_announcement(data: bytes) -> ParticipantAnnouncement:
    msg = deserialize(data, ANNOUNCEMENT_TYPE)
    count = len(msg.directions)
    columns = (msg.topic_names, msg.type_names, msg.type_hashes, msg.reliability,
               msg.durability, msg.history, msg.depth, msg.deadline, msg.lifespan,
               msg.liveliness, msg.lease, msg.owning_nodes)
    if any(len(c) != count for c in columns) or len(msg.endpoint_guids) != count * GUID_SIZE:
        raise DecodeError("Announcement endpoint columns have different lengths")
    endpoints = []
    try:
        for i in range(count):
            qos = QosProfile(
                reliability=Reliability(msg.reliability[i]),
                durability=Durability(msg.durability[i]),
                history=HistoryKind(msg.history[i]),
                depth=msg.depth[i],
                deadline=msg.deadline[i] or None,
                lifespan=msg.lifespan[i] or None,
                liveliness=Liveliness(msg.liveliness[i]),
                lease_duration=msg.lease[i],
            )
            endpoints.append(EndpointInfo(
                direction=EndpointKind(msg.directions[i]),
                topic_name=msg.topic_names[i],
                type_name=msg.type_names[i],
                type_hash=msg.type_hashes[i],
                qos=qos,
                endpoint_guid=msg.endpoint_guids[i * GUID_SIZE:(i + 1) * GUID_SIZE],
                owning_node=msg.owning_nodes[i],
            ))
    except (ValueError, ValidationError, SchemaError) as e:
        raise DecodeError(f"Invalid endpoint in announcement: {e}") from None
    return ParticipantAnnouncement(
        participant_guid=msg.participant_guid,
        host=msg.host,
        port=msg.port,
        nodes=tuple(msg.nodes),
        endpoints=tuple(endpoints),
        lease_duration=msg.lease_duration,
        announcement_seq=msg.announcement_seq,
        certificate=msg.certificate,
        permissions=msg.permissions,
        signature=msg.signature,
    )
