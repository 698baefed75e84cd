"""Demo components loadable by name with `minibus run`."""
import logging

from src.graph.composition import register_component
from src.interfaces.builtin import STRING
from src.rpc.action import COUNTDOWN
from src.rpc.service import ADD_TWO_INTS

logger = logging.getLogger(__name__)


@register_component("talker")
def talker(context):
    node = context.create_node("talker")
    node.declare_parameter("period", 1.0, description="seconds between messages")
    node.declare_parameter("prefix", "hello")
    publisher = node.create_publisher("/chatter", STRING)
    count = {"n": 0}

    def tick():
        count["n"] += 1
        publisher.publish({"data": f"{node.get_parameter('prefix')} {count['n']}"})

    node.create_timer(node.get_parameter("period"), tick)
    return node


@register_component("listener")
def listener(context):
    node = context.create_node("listener")
    node.create_subscription("/chatter", STRING, lambda msg: logger.info(f"I heard: {msg.data}"))
    return node


def add_two_ints(request) -> dict:
    return {"sum": request.a + request.b}


@register_component("add_two_ints_server")
def add_two_ints_server(context):
    node = context.create_node("add_two_ints_server")
    node.create_service("/add_two_ints", ADD_TWO_INTS, add_two_ints)
    return node


def countdown(goal_handle):
    """Feedback n, n-1, ... 1, then `reached` 0. Stops early on cancel."""
    for remaining in range(goal_handle.goal.n, 0, -1):
        if goal_handle.is_cancel_requested:
            goal_handle.canceled()
            return {"reached": remaining}
        yield {"remaining": remaining}
    return {"reached": 0}


@register_component("countdown_server")
def countdown_server(context):
    node = context.create_node("countdown_server")
    node.create_action_server("/countdown", COUNTDOWN, countdown,
                              goal_callback=lambda goal: goal.n >= 0,
                              cancel_callback=lambda handle: True)
    return node
