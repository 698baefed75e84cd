from src.discovery.announcer import Announcer, DiscoverySubtype
from src.discovery.endpoints import EndpointInfo, EndpointKind, ParticipantAnnouncement
from src.discovery.graph_view import GraphEvent, GraphEventKind, GraphView
from src.discovery.matching import Incompatibility, qos_compatible

__all__ = [
    "Announcer", "DiscoverySubtype", "EndpointInfo", "EndpointKind", "ParticipantAnnouncement",
    "GraphEvent", "GraphEventKind", "GraphView", "Incompatibility", "qos_compatible",
]
