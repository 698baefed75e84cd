"""minibus: command-line tools for a running graph.

    minibus node list
    minibus topic list | echo <topic> | pub <topic> <payload> | hz <topic>
    minibus service list | call <name> <request>
    minibus lifecycle get <node> | set <node> <transition>
    minibus param list <node> | get <node> <name> | set <node> <name> <value>
    minibus bag record <topics...> -o <file> | play <file> | info <file>
    minibus perf [--mode ...] [--sizes 1k,4k,...]
    minibus loss [--losses 0,10,20] [--simulated]
    minibus security create-anchor | create-identity | create-permissions | verify
    minibus run <component> [<component> ...]

Exit codes: 0 ok, 1 user error, 2 runtime failure.
"""
import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Callable, Optional

import pandas as pd

from src.discovery.endpoints import EndpointKind
from src.graph.composition import compose_by_name
from src.graph.context import Context
from src.graph.executor import SingleThreadedExecutor
from src.interfaces import builtin
from src.interfaces.types import PrimitiveKind as K
from src.node_management.lifecycle import CHANGE_STATE, GET_STATE, remote_lifecycle_names
from src.node_management.parameter_service import ParameterClient
from src.node_management.parameters import ParameterType, parse_parameter_text
from src.rpc.service import SERVICE_TYPES
from src.security.identity import verify_certificate
from src.security.keystore import Keystore
from src.security.permissions import PermissionRule, create_permissions, verify_permissions
from src.shared.clock import VirtualClock
from src.shared.config import LOSS_DEFAULTS, PERF_DEFAULT_DURATION, PERF_DEFAULT_RATE, load_config
from src.shared.errors import (
    BagFormatError, KeystoreError, MiddlewareError, NameConflictError, ParameterAccessError,
    ParameterTypeError, PartialResultError, SchemaError, SecurityError, TransitionError, UnknownParameterError,
    ValidationError,
)
from src.tooling import introspection
from src.tooling.bag import bag_duration, bag_info, play_bag, read_bag, record_bag
from src.tooling.loss import LossConfig, run_loss
from src.tooling.perf import PerfConfig, PerfMode, parse_size, run_perf
from src.transport.qos import SENSOR_DATA_QOS, Durability, Reliability
from src.transport.simulated import SimulatedNetwork

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_RUNTIME_ERROR = 2

USER_ERRORS = (
    ValidationError, SchemaError, ParameterTypeError, UnknownParameterError, ParameterAccessError,
    TransitionError, KeystoreError, BagFormatError, NameConflictError, FileNotFoundError, ValueError,
)


class _Parser(argparse.ArgumentParser):
    """Bad usage is a user error (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER_ERROR, f"{self.prog}: error: {message}\n")


# --- Output ---

def _plain(value):
    if isinstance(value, (bytes, bytearray)):
        return list(value)
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def emit(rows, fmt: str, out=None) -> None:
    """Print a table (DataFrame or list of dicts) as text, csv or jsonl."""
    out = out or sys.stdout
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame([_plain(r) for r in rows])
    if fmt == "csv":
        out.write(frame.to_csv(index=False, lineterminator="\n"))
    elif fmt == "jsonl":
        for record in frame.to_dict(orient="records"):
            out.write(json.dumps(_plain(record), default=str) + "\n")
    elif frame.empty:
        return
    elif len(frame.columns) == 1:
        for value in frame.iloc[:, 0]:
            out.write(f"{value}\n")
    else:
        out.write(frame.to_string(index=False) + "\n")
    out.flush()


class RowWriter:
    """Streaming counterpart of `emit` for echo-style commands."""

    def __init__(self, fmt: str, out=None):
        self.fmt = fmt
        self.out = out or sys.stdout
        self._columns = None

    def write(self, row: dict) -> None:
        row = _plain(row)
        if self.fmt == "csv":
            flat = pd.json_normalize(row, sep=".")
            if self._columns is None:
                self._columns = list(flat.columns)
                self.out.write(",".join(self._columns) + "\n")
            self.out.write(flat.reindex(columns=self._columns).to_csv(index=False, header=False,
                                                                        lineterminator="\n"))
        else:
            self.out.write(json.dumps(row, default=str) + "\n")
        self.out.flush()


# --- Session ---

class Session:
    """The CLI's own participant: one context, one executor, one hidden node."""

    def __init__(self, args, context_factory: Callable, executor=None):
        overrides = {}
        if args.domain_id is not None:
            overrides["domain_id"] = args.domain_id
        self.context = context_factory(overrides)
        self.config = self.context.config
        self._owns_executor = executor is None
        self.executor = executor or SingleThreadedExecutor([self.context])
        if not self._owns_executor:
            self.executor.add_context(self.context)
        self.node = self.context.create_node(f"minibus_cli_{os.getpid()}", start_parameter_services=False)
        self.wait = args.wait if args.wait is not None else 2 * self.config["announce_period"] + 0.5
        self.timeout = args.timeout if args.timeout is not None else self.config["service_timeout"]

    def settle(self) -> None:
        """Give discovery time to fill the graph view."""
        self.executor.spin(self.wait)

    def close(self) -> None:
        if not self._owns_executor:
            self.executor.remove_context(self.context)
        self.context.shutdown()


def _default_context_factory(config_path: Optional[str]) -> Callable:
    return lambda overrides: Context(config=overrides, config_path=config_path)


# --- Graph commands ---

def cmd_node_list(args, session: Session) -> int:
    session.settle()
    names = [n for n in introspection.list_nodes(session.node) if n != session.node.fqn]
    emit([{"node": n} for n in names], args.format)
    return EXIT_OK


def cmd_topic_list(args, session: Session) -> int:
    session.settle()
    rows = [{"topic": name, "types": ",".join(types)}
            for name, types in introspection.list_topics(session.node, include_hidden=args.all)]
    if not args.show_types:
        rows = [{"topic": r["topic"]} for r in rows]
    emit(rows, args.format)
    return EXIT_OK


def _echo_qos(args, publishers: list):
    qos = introspection.subscription_qos_for(publishers, depth=args.depth)
    if args.reliable:
        qos = replace(qos, reliability=Reliability.RELIABLE)
    if args.best_effort:
        qos = replace(qos, reliability=Reliability.BEST_EFFORT)
    if args.transient_local:
        qos = replace(qos, durability=Durability.TRANSIENT_LOCAL)
    return qos


def cmd_topic_echo(args, session: Session) -> int:
    topic = session.node.resolve(args.topic)
    publishers = introspection.wait_for_publishers(session.node, session.executor, topic, session.wait)
    first = publishers[0]
    writer = RowWriter(args.format)
    received = []

    def on_message(raw):
        decoded = introspection.decode_raw(raw)
        if decoded is None:
            decoded = {"type": raw.type_name, "bytes": len(raw.payload)}
        writer.write(decoded)
        received.append(raw)

    session.node.create_raw_subscription(topic, first.type_name, first.type_hash, on_message,
                                         _echo_qos(args, publishers))
    clock = session.executor.clock
    deadline = None if args.duration is None else clock.now() + args.duration
    try:
        while args.count is None or len(received) < args.count:
            if deadline is not None and clock.now() >= deadline:
                break
            session.executor.spin_once(0.05)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _resolve_descriptor(session: Session, topic: str, type_name: Optional[str]):
    if type_name:
        descriptor = builtin.lookup(type_name)
        if descriptor is None:
            raise ValidationError(f"Unknown message type {type_name!r}; known: {sorted(builtin.REGISTRY)}")
        return descriptor
    session.settle()
    graph = session.node.participant.graph
    endpoints = (graph.endpoints_for(topic, EndpointKind.PUBLISHER)
                 + graph.endpoints_for(topic, EndpointKind.SUBSCRIPTION))
    for endpoint in endpoints:
        descriptor = builtin.lookup(endpoint.type_name)
        if descriptor is not None and descriptor.type_hash == endpoint.type_hash:
            return descriptor
    raise ValidationError(f"Cannot infer the type of {topic}; pass --type")


def parse_payload(descriptor, text: str) -> dict:
    """JSON object for the message; a bare value is accepted for
    single-field types (`"hello"` for std/String)."""
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    if isinstance(value, dict):
        return value
    if len(descriptor.fields) == 1:
        field_name, field_type = descriptor.fields[0]
        if field_type == K.STRING and not isinstance(value, str):
            value = text
        return {field_name: value}
    raise ValidationError(f"{descriptor.name} payload must be a JSON object, got {text!r}")


def cmd_topic_pub(args, session: Session) -> int:
    topic = session.node.resolve(args.topic)
    descriptor = _resolve_descriptor(session, topic, args.type)
    message = descriptor.new(**parse_payload(descriptor, args.payload))
    publisher = session.node.create_publisher(topic, descriptor)
    session.executor.spin_until(lambda: publisher.matched_count > 0, session.wait)
    clock = session.executor.clock
    start = clock.now()
    sent = 0
    try:
        while args.times is None or sent < args.times:
            due = start + sent / args.rate
            session.executor.spin_until(lambda: clock.now() >= due, max(due - clock.now(), 0.0) + 1.0)
            publisher.publish(message)
            sent += 1
            if args.format == "text":
                print(f"publishing #{sent}: {json.dumps(_plain(message.to_dict()))}")
    except KeyboardInterrupt:
        pass
    # let reliable samples be acknowledged before the participant leaves
    session.executor.spin(0.2)
    return EXIT_OK


def cmd_topic_hz(args, session: Session) -> int:
    topic = session.node.resolve(args.topic)
    publishers = introspection.wait_for_publishers(session.node, session.executor, topic, session.wait)
    first = publishers[0]
    monitor = introspection.RateMonitor(window=args.window)
    session.node.create_raw_subscription(topic, first.type_name, first.type_hash,
                                         lambda raw: monitor.add(raw.received_at),
                                         introspection.subscription_qos_for(publishers, depth=100))
    try:
        session.executor.spin(args.duration)
    except KeyboardInterrupt:
        pass
    emit([dict(topic=topic, **monitor.stats())], args.format)
    return EXIT_OK


# --- Services, lifecycle, parameters ---

def cmd_service_list(args, session: Session) -> int:
    session.settle()
    rows = [{"service": name, "types": ",".join(types)} for name, types in introspection.list_services(session.node)]
    if not args.show_types:
        rows = [{"service": r["service"]} for r in rows]
    emit(rows, args.format)
    return EXIT_OK


def _service_type_for(session: Session, name: str, type_name: Optional[str]):
    if not type_name:
        session.settle()
        for service, types in introspection.list_services(session.node):
            if service == name and types:
                type_name = types[0]
                break
        else:
            raise ValidationError(f"Unknown service {name}; pass --type if it is not up yet")
    service_type = SERVICE_TYPES.get(type_name)
    if service_type is None:
        raise ValidationError(f"Unknown service type {type_name!r}; known: {sorted(SERVICE_TYPES)}")
    return service_type


def _call(session: Session, name: str, service_type, request: dict):
    client = session.node.create_client(name, service_type, session.timeout)
    if not client.wait_for_service(session.executor, session.wait):
        raise ValidationError(f"Service {client.name} is not available")
    return client.call(request, session.executor, session.timeout)


def cmd_service_call(args, session: Session) -> int:
    name = session.node.resolve(args.name)
    service_type = _service_type_for(session, name, args.type)
    request = parse_payload(service_type.request, args.request) if args.request else {}
    response = _call(session, name, service_type, request)
    emit([response.to_dict()], args.format)
    return EXIT_OK


def cmd_lifecycle_get(args, session: Session) -> int:
    names = remote_lifecycle_names(args.node)
    response = _call(session, names["get_state"], GET_STATE, {})
    emit([{"node": args.node, "state": response.state}], args.format)
    return EXIT_OK


def cmd_lifecycle_set(args, session: Session) -> int:
    names = remote_lifecycle_names(args.node)
    response = _call(session, names["change_state"], CHANGE_STATE, {"transition": args.transition})
    if not response.success:
        raise TransitionError(f"{args.node}: {args.transition} refused in state {response.state}: {response.error}")
    emit([{"node": args.node, "state": response.state}], args.format)
    return EXIT_OK


def _parameter_client(session: Session, target: str) -> ParameterClient:
    client = ParameterClient(session.node, target, session.timeout)
    if not client.wait_for_service(session.executor, session.wait):
        raise ValidationError(f"Node {target} has no parameter services")
    return client


def cmd_param_list(args, session: Session) -> int:
    client = _parameter_client(session, args.node)
    names = client.list(session.executor, args.prefix, session.timeout)
    emit([{"name": n} for n in names], args.format)
    return EXIT_OK


def cmd_param_get(args, session: Session) -> int:
    client = _parameter_client(session, args.node)
    described = client.describe(args.name, session.executor, session.timeout)
    emit([{"name": args.name, "type": described["type"], "value": json.dumps(_plain(described["value"]))}],
         args.format)
    return EXIT_OK


def cmd_param_set(args, session: Session) -> int:
    client = _parameter_client(session, args.node)
    described = client.describe(args.name, session.executor, session.timeout)
    value = parse_parameter_text(ParameterType(described["type"]), args.value)
    client.set(args.name, value, session.executor, session.timeout)
    if args.format == "text":
        print(f"Set {args.node} {args.name} = {json.dumps(_plain(value))}")
    return EXIT_OK


# --- Bags ---

def cmd_bag_record(args, session: Session) -> int:
    counts = record_bag(session.node, session.executor, args.topics, args.output,
                        duration=args.duration, max_messages=args.count)
    emit([{"topic": t, "count": c} for t, c in sorted(counts.items())], args.format)
    return EXIT_OK


def cmd_bag_play(args, session: Session) -> int:
    records = read_bag(args.file)
    played = play_bag(session.node, session.executor, records, rate=args.rate, match_timeout=session.wait)
    if args.format == "text":
        print(f"Played {played} records from {args.file}")
    return EXIT_OK


def cmd_bag_info(args) -> int:
    records = read_bag(args.file)
    emit(bag_info(records), args.format)
    if args.format == "text":
        print(f"records: {len(records)}  duration: {bag_duration(records):.3f}s")
    return EXIT_OK


# --- Benchmarks ---

def _base_config(args) -> dict:
    overrides = {} if args.domain_id is None else {"domain_id": args.domain_id}
    return load_config(args.config, overrides)


def cmd_perf(args) -> int:
    qos = SENSOR_DATA_QOS
    if args.reliable:
        qos = replace(qos, reliability=Reliability.RELIABLE)
    config = PerfConfig(
        mode=PerfMode(args.mode),
        sizes=[parse_size(s) for s in args.sizes.split(",")] if args.sizes else PerfConfig().sizes,
        rate=args.rate,
        duration=args.duration,
        qos=qos,
    )
    network = SimulatedNetwork(VirtualClock()) if args.simulated else None
    result = run_perf(config, _base_config(args), network=network)
    if args.output:
        result.to_csv(args.output)
    if args.format == "csv":
        sys.stdout.write(result.to_csv())
    else:
        emit(result.to_frame().reindex(columns=["size_bytes", "mode", "mean_latency_ms", "p95_latency_ms",
                                                "rate_hz", "cpu_percent"]), args.format)
    return EXIT_OK


def cmd_loss(args) -> int:
    config = LossConfig(
        loss_percents=[float(p) for p in args.losses.split(",")],
        bandwidth_bps=args.bandwidth or None,
        message_size=args.size,
        send_rate=args.send_rate,
        duration=args.duration,
        grace=args.grace,
        seed=args.seed,
    )
    result = run_loss(config, _base_config(args), simulated=args.simulated)
    if args.output:
        result.to_csv(args.output)
    if args.format == "csv":
        sys.stdout.write(result.to_csv())
    else:
        emit(result.to_frame(), args.format)
    return EXIT_OK


# --- Security ---

def _keystore(args) -> Keystore:
    return Keystore(args.keystore, _base_config(args)["signature_scheme"])


def cmd_security_create_anchor(args) -> int:
    anchor = _keystore(args).create_anchor(args.name, overwrite=args.overwrite)
    print(f"Trust anchor '{anchor.name}' written to {args.keystore}")
    return EXIT_OK


def cmd_security_create_identity(args) -> int:
    keystore = _keystore(args)
    keystore.issue_identity(args.subject, args.days, overwrite=args.overwrite)
    print(f"Identity '{args.subject}' written to {keystore.identity_dir(args.subject)}")
    return EXIT_OK


def cmd_security_create_permissions(args) -> int:
    try:
        rules = [PermissionRule.parse(text) for text in args.allow or []]
    except SecurityError as e:
        raise ValidationError(str(e)) from None
    keystore = _keystore(args)
    doc = create_permissions(keystore.load_anchor(with_private=True), args.subject, rules)
    path = keystore.store_permissions(doc)
    print(f"Permissions for '{args.subject}' ({len(doc.rules)} rules) written to {path}")
    return EXIT_OK


def cmd_security_verify(args) -> int:
    keystore = _keystore(args)
    anchor = keystore.load_anchor()
    subjects = [args.subject] if args.subject else keystore.subjects()
    rows = []
    for subject in subjects:
        cert = keystore.load_identity(subject).certificate
        doc = keystore.load_permissions(subject)
        rows.append({
            "subject": subject,
            "certificate": "valid" if verify_certificate(cert, anchor.public_key, time.time()) else "INVALID",
            "permissions": "missing" if doc is None else (
                "valid" if verify_permissions(doc, anchor.public_key) and doc.subject == subject else "INVALID"),
            "rules": "" if doc is None else " ".join(str(r) for r in doc.rules),
        })
    emit(rows, args.format)
    ok = all(r["certificate"] == "valid" and r["permissions"] != "INVALID" for r in rows)
    return EXIT_OK if ok else EXIT_USER_ERROR


# --- Components ---

def cmd_run(args, session: Session) -> int:
    import src.tooling.components  # noqa: F401  registers the demo components

    container = compose_by_name(session.context, args.components)
    logger.info(f"Running {[n.fqn for n in container.nodes]}")
    try:
        session.executor.spin(args.duration)
    except KeyboardInterrupt:
        pass
    finally:
        container.destroy()
    return EXIT_OK


# --- Parser ---

def _add_list_flags(parser) -> None:
    parser.add_argument("-t", "--show-types", action="store_true", help="include type names")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="minibus", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--domain-id", type=int, help="override the configured domain")
    parser.add_argument("--format", choices=["text", "csv", "jsonl"], default="text")
    parser.add_argument("--wait", type=float, help="seconds to wait for discovery (default 2 announce periods)")
    parser.add_argument("--timeout", type=float, help="service call timeout in seconds")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    areas = parser.add_subparsers(dest="area", required=True, parser_class=_Parser)

    node = areas.add_parser("node", help="graph nodes").add_subparsers(dest="action", required=True)
    node.add_parser("list", help="fully-qualified names of live nodes").set_defaults(func=cmd_node_list)

    topic = areas.add_parser("topic", help="topics").add_subparsers(dest="action", required=True)
    p = topic.add_parser("list", help="topics with at least one endpoint")
    _add_list_flags(p)
    p.add_argument("-a", "--all", action="store_true", help="include service and action plumbing")
    p.set_defaults(func=cmd_topic_list)
    p = topic.add_parser("echo", help="print messages as they arrive")
    p.add_argument("topic")
    p.add_argument("-n", "--count", type=int, help="stop after this many messages")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--reliable", action="store_true")
    p.add_argument("--best-effort", action="store_true")
    p.add_argument("--transient-local", action="store_true")
    p.set_defaults(func=cmd_topic_echo)
    p = topic.add_parser("pub", help="publish a message")
    p.add_argument("topic")
    p.add_argument("payload", help='JSON object, e.g. \'{"data": "hi"}\'; bare values for one-field types')
    p.add_argument("--type", help="message type name (inferred from the graph when omitted)")
    p.add_argument("-r", "--rate", type=float, default=1.0, help="messages per second")
    p.add_argument("--times", type=int, default=1, help="number of messages (0 = until interrupted)")
    p.set_defaults(func=cmd_topic_pub)
    p = topic.add_parser("hz", help="measure the publishing rate")
    p.add_argument("topic")
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--window", type=int, default=10_000)
    p.set_defaults(func=cmd_topic_hz)

    service = areas.add_parser("service", help="services").add_subparsers(dest="action", required=True)
    p = service.add_parser("list", help="services with a live server")
    _add_list_flags(p)
    p.set_defaults(func=cmd_service_list)
    p = service.add_parser("call", help="call a service once")
    p.add_argument("name")
    p.add_argument("request", nargs="?", default="", help="JSON request object")
    p.add_argument("--type", help="service type name (inferred from the graph when omitted)")
    p.set_defaults(func=cmd_service_call)

    lifecycle = areas.add_parser("lifecycle", help="managed nodes").add_subparsers(dest="action", required=True)
    p = lifecycle.add_parser("get", help="current state")
    p.add_argument("node")
    p.set_defaults(func=cmd_lifecycle_get)
    p = lifecycle.add_parser("set", help="request a transition")
    p.add_argument("node")
    p.add_argument("transition", choices=["configure", "activate", "deactivate", "cleanup", "shutdown"])
    p.set_defaults(func=cmd_lifecycle_set)

    param = areas.add_parser("param", help="node parameters").add_subparsers(dest="action", required=True)
    p = param.add_parser("list")
    p.add_argument("node")
    p.add_argument("--prefix", default="")
    p.set_defaults(func=cmd_param_list)
    p = param.add_parser("get")
    p.add_argument("node")
    p.add_argument("name")
    p.set_defaults(func=cmd_param_get)
    p = param.add_parser("set")
    p.add_argument("node")
    p.add_argument("name")
    p.add_argument("value", help="JSON, or bare text for string parameters")
    p.set_defaults(func=cmd_param_set)

    bag = areas.add_parser("bag", help="record and replay").add_subparsers(dest="action", required=True)
    p = bag.add_parser("record", help="record topics matching the given globs")
    p.add_argument("topics", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--duration", type=float)
    p.add_argument("-n", "--count", type=int, help="stop after this many messages")
    p.set_defaults(func=cmd_bag_record)
    p = bag.add_parser("play", help="republish a bag with its original timing")
    p.add_argument("file")
    p.add_argument("-r", "--rate", type=float, default=1.0, help="playback speed multiplier")
    p.set_defaults(func=cmd_bag_play)
    p = bag.add_parser("info", help="per-topic summary")
    p.add_argument("file")
    p.set_defaults(func=cmd_bag_info, offline=True)

    p = areas.add_parser("perf", help="latency and rate over message sizes")
    p.add_argument("--mode", choices=[m.value for m in PerfMode], default=PerfMode.INTRA_PROCESS.value)
    p.add_argument("--sizes", help="comma list such as 1k,64k,1m (default 1k..8m)")
    p.add_argument("--rate", type=float, default=PERF_DEFAULT_RATE)
    p.add_argument("--duration", type=float, default=PERF_DEFAULT_DURATION)
    p.add_argument("--reliable", action="store_true", help="RELIABLE instead of the sensor-data profile")
    p.add_argument("--simulated", action="store_true", help="in-memory network and virtual clock")
    p.add_argument("-o", "--output", help="CSV output file")
    p.set_defaults(func=cmd_perf, offline=True)

    p = areas.add_parser("loss", help="per-second delivery under packet loss")
    p.add_argument("--losses", default=",".join(str(x) for x in LOSS_DEFAULTS["loss_percents"]))
    p.add_argument("--bandwidth", type=float, default=LOSS_DEFAULTS["bandwidth_bps"], help="bits/s, 0 = uncapped")
    p.add_argument("--size", type=int, default=LOSS_DEFAULTS["message_size"])
    p.add_argument("--send-rate", type=float, default=LOSS_DEFAULTS["send_rate"])
    p.add_argument("--duration", type=float, default=LOSS_DEFAULTS["duration"])
    p.add_argument("--grace", type=float, default=LOSS_DEFAULTS["grace"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--simulated", action="store_true", help="one process, in-memory network, virtual clock")
    p.add_argument("-o", "--output", help="CSV output file")
    p.set_defaults(func=cmd_loss, offline=True)

    security = areas.add_parser("security", help="keystore management").add_subparsers(dest="action", required=True)
    p = security.add_parser("create-anchor")
    p.add_argument("--keystore", default="./keystore")
    p.add_argument("--name", default="minibus-anchor")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_security_create_anchor, offline=True)
    p = security.add_parser("create-identity")
    p.add_argument("subject")
    p.add_argument("--keystore", default="./keystore")
    p.add_argument("--days", type=float, default=365.0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_security_create_identity, offline=True)
    p = security.add_parser("create-permissions")
    p.add_argument("subject")
    p.add_argument("--keystore", default="./keystore")
    p.add_argument("--allow", action="append", help="PUB:<glob> or SUB:<glob>; repeatable")
    p.set_defaults(func=cmd_security_create_permissions, offline=True)
    p = security.add_parser("verify")
    p.add_argument("subject", nargs="?")
    p.add_argument("--keystore", default="./keystore")
    p.set_defaults(func=cmd_security_verify, offline=True)

    p = areas.add_parser("run", help="host registered components in one process")
    p.add_argument("components", nargs="+")
    p.add_argument("--duration", type=float, help="seconds to run (default: until interrupted)")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None, context_factory: Optional[Callable] = None, executor=None) -> int:
    """Entry point. `context_factory(overrides) -> Context` and `executor`
    let callers run commands against a simulated graph."""
    args = build_parser().parse_args(argv)
    if args.area == "topic" and args.action == "pub" and args.times == 0:
        args.times = None
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
    )
    session = None
    try:
        if getattr(args, "offline", False):
            return args.func(args)
        session = Session(args, context_factory or _default_context_factory(args.config), executor)
        return args.func(args, session)
    except USER_ERRORS as e:
        sys.stderr.write(f"minibus: {e}\n")
        return EXIT_USER_ERROR
    except PartialResultError as e:
        sys.stderr.write(f"minibus: incomplete run: {e}\n")
        if e.partial is not None and getattr(e.partial, "to_csv", None):
            sys.stdout.write(e.partial.to_csv())
        return EXIT_RUNTIME_ERROR
    except (MiddlewareError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        sys.stderr.write(f"minibus: {e}\n")
        return EXIT_RUNTIME_ERROR
    finally:
        if session is not None:
            session.close()


if __name__ == "__main__":
    sys.exit(main())
