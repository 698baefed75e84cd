import logging
from typing import Optional

from src.graph.node import Node
from src.graph.participant import Participant
from src.security.context import SecurityContext
from src.shared.clock import SystemClock
from src.shared.config import load_config
from src.shared.diagnostics import Diagnostics
from src.transport import create_transport
from src.transport.impairment import ImpairmentConfig
from src.transport.simulated import SimulatedNetwork

logger = logging.getLogger(__name__)


class Context:
    """One participant plus the nodes that share it.

    The transport is chosen by configuration: pass `network` to join an
    in-memory SimulatedNetwork, otherwise real UDP sockets are opened.
    With `security` on in the configuration and no explicit security
    context, the identity named by `identity` is loaded from `keystore`.
    """

    def __init__(self, config: Optional[dict] = None, config_path: Optional[str] = None, clock=None,
                 network: Optional[SimulatedNetwork] = None, security: Optional[SecurityContext] = None,
                 impairment: Optional[ImpairmentConfig] = None, diagnostics: Optional[Diagnostics] = None):
        self.config = load_config(config_path, config)
        if clock is None:
            clock = network.clock if network is not None else SystemClock()
        self.clock = clock
        if security is None and self.config["security"]:
            security = SecurityContext.from_keystore(
                self.config["keystore"], self.config["identity"], self.config["agreement_scheme"],
                self.config["signature_scheme"],
            )
        self.security = security
        self.network = network
        transport = create_transport(self.config, clock, network=network, impairment=impairment)
        self.participant = Participant(self.config, clock, transport, security=security, diagnostics=diagnostics)
        self.nodes: dict = {}
        self._subscriptions: dict = {}
        self.ok = True

    @property
    def diagnostics(self) -> Diagnostics:
        return self.participant.diagnostics

    # --- Nodes ---

    def create_node(self, name: str, namespace: str = "", node_class=Node, **kwargs) -> Node:
        return node_class(self, name, namespace, **kwargs)

    def register_node(self, node: Node) -> None:
        self.nodes[node.fqn] = node

    def unregister_node(self, node: Node) -> None:
        self.nodes.pop(node.fqn, None)

    def node(self, fqn: str) -> Optional[Node]:
        return self.nodes.get(fqn)

    # --- Intra-process registry ---

    def register_subscription(self, guid: bytes, subscription) -> None:
        self._subscriptions[guid] = subscription

    def unregister_subscription(self, guid: bytes) -> None:
        self._subscriptions.pop(guid, None)

    def subscription(self, guid: bytes):
        return self._subscriptions.get(guid)

    def waitables(self) -> list:
        out = []
        for node in list(self.nodes.values()):
            out.extend(node.waitables())
        return out

    # --- Teardown ---

    def shutdown(self) -> None:
        if not self.ok:
            return
        self.ok = False
        for node in list(self.nodes.values()):
            node.destroy()
        self.participant.close()
        logger.info(f"Context {self.participant.guid.hex()} shut down")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False

