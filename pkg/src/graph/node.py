import logging
from typing import Callable, Optional

from src.discovery.endpoints import EndpointKind
from src.graph.names import fully_qualified, normalize_namespace, resolve_topic
from src.graph.publisher import Publisher, RawPublisher
from src.graph.subscription import RawSubscription, Subscription
from src.graph.timer import Timer
from src.interfaces.types import TypeDescriptor
from src.node_management.parameter_service import ParameterService
from src.node_management.parameters import PARAMETER_EVENT, PARAMETER_EVENTS_TOPIC, ParameterStore
from src.rpc.action import ActionClient, ActionServer
from src.rpc.service import Client, Service
from src.transport.qos import DEFAULT_QOS, QosProfile

logger = logging.getLogger(__name__)

PARAMETER_EVENTS_QOS = QosProfile(depth=100)


class Node:
    """Organizational unit owning endpoints, timers and parameters.

    Everything a node creates dies with it. Create nodes through
    `Context.create_node` or `create_node`.
    """

    def __init__(self, context, name: str, namespace: str = "", start_parameter_services: bool = True):
        self.context = context
        self.name = name
        self.namespace = normalize_namespace(namespace)
        self.fqn = fully_qualified(name, namespace)
        self.participant = context.participant
        self.participant.add_node(self.fqn)
        self.publishers: list = []
        self.subscriptions: list = []
        self.timers: list = []
        self.services: list = []
        self.clients: list = []
        self.action_servers: list = []
        self.action_clients: list = []
        self.destroyed = False
        context.register_node(self)

        self._parameter_events = self.create_publisher(
            PARAMETER_EVENTS_TOPIC, PARAMETER_EVENT, PARAMETER_EVENTS_QOS, gated=False,
        )
        self.parameters = ParameterStore(self.fqn, on_change=self._publish_parameter_event)
        self.parameter_service = None
        if start_parameter_services:
            self.parameter_service = ParameterService(self)
        logger.info(f"Node {self.fqn} created")

    # --- Names ---

    def resolve(self, topic: str) -> str:
        return resolve_topic(topic, self.namespace, self.fqn)

    def _gate(self) -> Optional[Callable[[], bool]]:
        """Publish/timer gate; managed nodes override this."""
        return None

    # --- Endpoints ---

    def create_publisher(self, topic: str, descriptor: TypeDescriptor, qos: QosProfile = DEFAULT_QOS,
                         gated: bool = True) -> Publisher:
        publisher = Publisher(self, self.resolve(topic), descriptor, qos, self._gate() if gated else None)
        self.publishers.append(publisher)
        return publisher

    def create_subscription(self, topic: str, descriptor: TypeDescriptor, callback: Callable,
                            qos: QosProfile = DEFAULT_QOS, event_callbacks: Optional[dict] = None) -> Subscription:
        subscription = Subscription(self, self.resolve(topic), descriptor, qos, callback, event_callbacks)
        self.subscriptions.append(subscription)
        return subscription

    def create_raw_publisher(self, topic: str, type_name: str, type_hash: int,
                             qos: QosProfile = DEFAULT_QOS) -> RawPublisher:
        publisher = RawPublisher(self, self.resolve(topic), type_name, type_hash, qos)
        self.publishers.append(publisher)
        return publisher

    def create_raw_subscription(self, topic: str, type_name: str, type_hash: int, callback: Callable,
                                qos: QosProfile = DEFAULT_QOS) -> RawSubscription:
        subscription = RawSubscription(self, self.resolve(topic), type_name, type_hash, qos, callback)
        self.subscriptions.append(subscription)
        return subscription

    def create_timer(self, period: float, callback: Callable[[], None], gated: bool = True) -> Timer:
        timer = Timer(period, callback, self.context.clock, self._gate() if gated else None)
        self.timers.append(timer)
        return timer

    def create_service(self, name: str, service_type, callback: Callable):
        service = Service(self, name, service_type, callback)
        self.services.append(service)
        return service

    def create_client(self, name: str, service_type, timeout: Optional[float] = None):
        client = Client(self, name, service_type, timeout)
        self.clients.append(client)
        return client

    def create_action_server(self, name: str, action_type, execute_callback: Callable, **callbacks):
        server = ActionServer(self, name, action_type, execute_callback, **callbacks)
        self.action_servers.append(server)
        return server

    def create_action_client(self, name: str, action_type):
        client = ActionClient(self, name, action_type)
        self.action_clients.append(client)
        return client

    def waitables(self) -> list:
        out = list(self.timers)
        out.extend(self.subscriptions)
        out.extend(self.services)
        out.extend(self.clients)
        out.extend(self.action_servers)
        out.extend(self.action_clients)
        return out

    # --- Parameters ---

    def declare_parameter(self, name: str, value=None, declared_type=None, read_only: bool = False,
                          description: str = ""):
        return self.parameters.declare(name, value, declared_type, read_only, description)

    def get_parameter(self, name: str):
        return self.parameters.get(name)

    def set_parameter(self, name: str, value):
        return self.parameters.set(name, value)

    def _publish_parameter_event(self, event: dict) -> None:
        self._parameter_events.publish(event)

    # --- Graph queries ---

    def get_node_names(self) -> list:
        return self.participant.graph.node_names()

    def get_topic_names_and_types(self) -> list:
        return self.participant.graph.topic_names_and_types()

    def get_service_names(self) -> list:
        return [name for name, _ in self.participant.graph.service_names_and_types()]

    def count_publishers(self, topic: str) -> int:
        return self.participant.graph.count(self.resolve(topic), EndpointKind.PUBLISHER)

    def count_subscribers(self, topic: str) -> int:
        return self.participant.graph.count(self.resolve(topic), EndpointKind.SUBSCRIPTION)

    # --- Teardown ---

    def destroy(self) -> None:
        if self.destroyed:
            return
        self.destroyed = True
        for group in (self.action_clients, self.action_servers, self.clients, self.services,
                      self.subscriptions, self.publishers):
            for entity in list(group):
                entity.destroy()
            group.clear()
        for timer in self.timers:
            timer.cancel()
        self.timers.clear()
        self.participant.remove_node(self.fqn)
        self.context.unregister_node(self)
        logger.info(f"Node {self.fqn} destroyed")


def create_node(context, name: str, namespace: str = "", **kwargs) -> Node:
    return context.create_node(name, namespace, **kwargs)
