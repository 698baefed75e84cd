import logging
from typing import Callable, Iterable

from src.shared.errors import ValidationError

logger = logging.getLogger(__name__)

# name -> factory(context) -> Node
COMPONENTS: dict = {}


def register_component(name: str):
    """Decorator making a node factory loadable by name, so which process
    hosts a node becomes a configuration choice."""
    def wrap(factory: Callable):
        COMPONENTS[name] = factory
        return factory
    return wrap


class Container:
    """Several nodes sharing one context (and so one participant).

    Pairs among them are matched over the intra-process path when the
    context has it enabled.
    """

    def __init__(self, context):
        self.context = context
        self.nodes: list = []

    def add(self, factory: Callable):
        node = factory(self.context)
        self.nodes.append(node)
        logger.info(f"Composed {node.fqn} into participant {self.context.participant.guid.hex()}")
        return node

    def add_by_name(self, name: str):
        factory = COMPONENTS.get(name)
        if factory is None:
            raise ValidationError(f"Unknown component {name!r}; known: {sorted(COMPONENTS)}")
        return self.add(factory)

    def node(self, fqn: str):
        for node in self.nodes:
            if node.fqn == fqn:
                return node
        return None

    def remove(self, fqn: str) -> None:
        node = self.node(fqn)
        if node is not None:
            node.destroy()
            self.nodes.remove(node)

    def destroy(self) -> None:
        for node in reversed(self.nodes):
            node.destroy()
        self.nodes.clear()


def compose(context, *factories: Callable) -> Container:
    container = Container(context)
    for factory in factories:
        container.add(factory)
    return container


def compose_by_name(context, names: Iterable[str]) -> Container:
    container = Container(context)
    for name in names:
        container.add_by_name(name.strip())
    return container
