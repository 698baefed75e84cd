import re

from src.shared.errors import ValidationError

NODE_NAME = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
TOKEN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def validate_node_name(name: str) -> None:
    if not isinstance(name, str) or not NODE_NAME.match(name):
        raise ValidationError(f"Invalid node name {name!r}: must match [A-Za-z][A-Za-z0-9_]*")


def normalize_namespace(namespace: str) -> str:
    """'' and '/' are the root; otherwise '/a/b' with no trailing slash."""
    if not namespace or namespace == "/":
        return ""
    if not namespace.startswith("/"):
        namespace = "/" + namespace
    namespace = namespace.rstrip("/")
    for part in namespace.split("/")[1:]:
        if not TOKEN.match(part):
            raise ValidationError(f"Invalid namespace {namespace!r}")
    return namespace


def fully_qualified(name: str, namespace: str) -> str:
    validate_node_name(name)
    return f"{normalize_namespace(namespace)}/{name}"


def resolve_topic(topic: str, namespace: str, node_fqn: str) -> str:
    """Absolute names pass through, '~/x' lands under the node, anything
    else is relative to the node's namespace."""
    if not topic:
        raise ValidationError("Topic name must be non-empty")
    if topic.startswith("~"):
        resolved = node_fqn + topic[1:]
    elif topic.startswith("/"):
        resolved = topic
    else:
        resolved = f"{normalize_namespace(namespace)}/{topic}"
    parts = resolved.split("/")[1:]
    if not parts or any(not TOKEN.match(p) for p in parts):
        raise ValidationError(f"Invalid topic name {topic!r} (resolved {resolved!r})")
    return resolved
