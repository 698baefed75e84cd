import itertools
import unittest

import numpy as np

from src.interfaces import builtin
from src.node_management.lifecycle import (
    GET_STATE, CHANGE_STATE, LIFECYCLE_EVENT, LIFECYCLE_TRANSITIONS, HookResult, LifecycleNode,
    LifecycleState, TransitionRequest, lifecycle_transition, remote_lifecycle_names,
)
from src.node_management.parameter_service import ParameterClient, parameter_service_names
from src.node_management.parameters import (
    PARAMETER_EVENT, PARAMETER_EVENTS_TOPIC, ParameterRecord, ParameterStore, ParameterType,
    check_parameter_value, declare_parameter, get_parameter, infer_parameter_type, list_parameters,
    parse_parameter_text, set_parameter,
)
from src.shared.errors import (
    ParameterAccessError, ParameterTypeError, TransitionError, UnknownParameterError, ValidationError,
)
from src.transport.qos import LATCHED_QOS, QosProfile
from tests.support import SimDomain

S, R = LifecycleState, TransitionRequest


class ScriptedNode(LifecycleNode):
    """Lifecycle node whose hooks return whatever the test scripted."""

    def __init__(self, context, name, namespace="", outcomes=None, **kwargs):
        self.outcomes = dict(outcomes or {})
        self.calls = []
        super().__init__(context, name, namespace, **kwargs)

    def _hook(self, request):
        self.calls.append(request)
        outcome = self.outcomes.get(request, HookResult.SUCCESS)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome

    def on_configure(self):
        return self._hook(R.CONFIGURE)

    def on_activate(self):
        return self._hook(R.ACTIVATE)

    def on_deactivate(self):
        return self._hook(R.DEACTIVATE)

    def on_cleanup(self):
        return self._hook(R.CLEANUP)

    def on_shutdown(self):
        return self._hook(R.SHUTDOWN)


class TestTransitionTable(unittest.TestCase):

    def test_every_pair(self):
        expected = {
            (S.UNCONFIGURED, R.CONFIGURE): S.INACTIVE,
            (S.INACTIVE, R.ACTIVATE): S.ACTIVE,
            (S.ACTIVE, R.DEACTIVATE): S.INACTIVE,
            (S.INACTIVE, R.CLEANUP): S.UNCONFIGURED,
            (S.UNCONFIGURED, R.SHUTDOWN): S.FINALIZED,
            (S.INACTIVE, R.SHUTDOWN): S.FINALIZED,
            (S.ACTIVE, R.SHUTDOWN): S.FINALIZED,
        }
        self.assertEqual(LIFECYCLE_TRANSITIONS, expected)
        for state, request in itertools.product(LifecycleState, TransitionRequest):
            if (state, request) in expected:
                self.assertEqual(lifecycle_transition(state, request), expected[(state, request)])
                self.assertEqual(lifecycle_transition(state, request, HookResult.FAILURE), state)
            else:
                with self.assertRaises(TransitionError):
                    lifecycle_transition(state, request)

    def test_finalized_is_terminal(self):
        for request in TransitionRequest:
            with self.assertRaises(TransitionError):
                lifecycle_transition(S.FINALIZED, request)

    def test_accepts_plain_strings(self):
        self.assertEqual(lifecycle_transition("INACTIVE", "ACTIVATE"), S.ACTIVE)


class TestLifecycleNode(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.ctx = self.domain.context()

    def tearDown(self):
        self.domain.close()

    def node(self, outcomes=None, name="driver"):
        return self.ctx.create_node(name, node_class=ScriptedNode, outcomes=outcomes)

    def test_full_walk(self):
        node = self.node()
        self.assertEqual(node.state, S.UNCONFIGURED)
        self.assertEqual(node.configure(), S.INACTIVE)
        self.assertEqual(node.activate(), S.ACTIVE)
        self.assertEqual(node.deactivate(), S.INACTIVE)
        self.assertEqual(node.cleanup(), S.UNCONFIGURED)
        self.assertEqual(node.shutdown(), S.FINALIZED)
        self.assertEqual(node.transition_count, 5)
        self.assertEqual(node.calls, [R.CONFIGURE, R.ACTIVATE, R.DEACTIVATE, R.CLEANUP, R.SHUTDOWN])

    def test_illegal_request_runs_no_hook(self):
        node = self.node()
        with self.assertRaises(TransitionError):
            node.activate()
        self.assertEqual(node.calls, [])
        self.assertEqual(node.state, S.UNCONFIGURED)

    def test_failing_hooks_keep_origin_state(self):
        for outcome in (False, HookResult.FAILURE, RuntimeError("camera unplugged")):
            node = self.node({R.CONFIGURE: outcome}, name=f"driver_{len(self.ctx.nodes)}")
            if isinstance(outcome, Exception):
                with self.assertLogs("src.node_management.lifecycle", level="ERROR"):
                    result = node.configure()
            else:
                result = node.configure()
            self.assertEqual(result, S.UNCONFIGURED)
            self.assertEqual(node.state, S.UNCONFIGURED)
            self.assertEqual(node.transition_count, 0)
        errors = self.ctx.diagnostics.errors
        self.assertEqual(len(errors), 1)
        self.assertEqual(errors[0]["impact"], "transition failed")
        self.assertIn("camera unplugged", errors[0]["message"])

    def test_none_and_true_count_as_success(self):
        node = self.node({R.CONFIGURE: None, R.ACTIVATE: True})
        node.configure()
        self.assertEqual(node.activate(), S.ACTIVE)

    def test_publish_dropped_unless_active(self):
        node = self.node()
        publisher = node.create_publisher("/scan", builtin.INT64)
        received = []
        self.ctx.create_node("consumer").create_subscription(
            "/scan", builtin.INT64, lambda msg: received.append(msg.data))
        self.assertFalse(publisher.publish({"data": 1}))
        node.configure()
        self.assertFalse(publisher.publish({"data": 1}))
        self.domain.spin(0.2)
        self.assertEqual(received, [])
        self.assertEqual(self.ctx.diagnostics.count("lifecycle_drops"), 2)
        self.assertEqual(publisher.dropped_count, 2)

        node.activate()
        self.assertTrue(publisher.publish({"data": 2}))
        self.domain.spin_until(lambda: received, 1.0)
        self.assertEqual(received, [2])

        node.deactivate()
        self.assertFalse(publisher.publish({"data": 3}))
        self.domain.spin(0.2)
        self.assertEqual(received, [2])

    def test_timers_fire_only_while_active(self):
        node = self.node()
        ticks = []
        node.create_timer(0.1, lambda: ticks.append(self.ctx.clock.now()))
        node.configure()
        self.domain.spin(1.0)
        self.assertEqual(ticks, [])
        node.activate()
        self.domain.spin(1.0)
        self.assertGreaterEqual(len(ticks), 9)
        node.deactivate()
        count = len(ticks)
        self.domain.spin(1.0)
        self.assertEqual(len(ticks), count)

    def test_shutdown_cancels_timers(self):
        node = self.node()
        timer = node.create_timer(0.1, lambda: None)
        node.configure()
        node.activate()
        node.shutdown()
        self.assertTrue(timer.canceled)

    def test_transitions_are_published(self):
        node = self.node()
        events = []
        self.ctx.create_node("monitor").create_subscription(
            remote_lifecycle_names(node.fqn)["events"], LIFECYCLE_EVENT,
            lambda msg: events.append((msg.transition, msg.start_state, msg.goal_state)),
            QosProfile(depth=10),
        )
        node.configure()
        node.activate()
        self.domain.spin_until(lambda: len(events) == 2, 1.0)
        self.assertEqual(events, [("CONFIGURE", "UNCONFIGURED", "INACTIVE"), ("ACTIVATE", "INACTIVE", "ACTIVE")])

    def test_late_monitor_sees_current_state(self):
        node = self.node()
        node.configure()
        node.activate()
        events = []
        self.ctx.create_node("monitor").create_subscription(
            f"{node.fqn}/lifecycle/events", LIFECYCLE_EVENT, lambda msg: events.append(msg.goal_state),
            LATCHED_QOS,
        )
        self.domain.spin_until(lambda: events, 1.0)
        self.assertEqual(events, ["ACTIVE"])

    def test_remote_state_services(self):
        node = self.node()
        remote = self.domain.context().create_node("operator")
        names = remote_lifecycle_names(node.fqn)
        change = remote.create_client(names["change_state"], CHANGE_STATE)
        get = remote.create_client(names["get_state"], GET_STATE)
        self.assertTrue(self.domain.spin_until(lambda: change.service_is_ready() and get.service_is_ready(), 5.0))

        response = change.call({"transition": "configure"}, self.domain.executor)
        self.assertTrue(response.success)
        self.assertEqual(response.state, "INACTIVE")
        self.assertEqual(get.call({}, self.domain.executor).state, "INACTIVE")

        response = change.call({"transition": "cleanup"}, self.domain.executor)
        self.assertTrue(response.success)
        response = change.call({"transition": "deactivate"}, self.domain.executor)
        self.assertFalse(response.success)
        self.assertIn("DEACTIVATE", response.error)
        response = change.call({"transition": "explode"}, self.domain.executor)
        self.assertFalse(response.success)
        self.assertEqual(response.state, "UNCONFIGURED")

    def test_remote_change_reports_hook_failure(self):
        node = self.node({R.CONFIGURE: False})
        remote = self.domain.context().create_node("operator")
        change = remote.create_client(remote_lifecycle_names(node.fqn)["change_state"], CHANGE_STATE)
        change.wait_for_service(self.domain.executor)
        response = change.call({"transition": "CONFIGURE"}, self.domain.executor)
        self.assertFalse(response.success)
        self.assertEqual(response.error, "hook failed")


class TestParameterValues(unittest.TestCase):

    def test_no_implicit_conversion(self):
        with self.assertRaises(ParameterTypeError):
            check_parameter_value(ParameterType.FLOAT64, 1)
        with self.assertRaises(ParameterTypeError):
            check_parameter_value(ParameterType.INT64, True)
        with self.assertRaises(ParameterTypeError):
            check_parameter_value(ParameterType.INT64, 2 ** 63)
        with self.assertRaises(ParameterTypeError):
            check_parameter_value(ParameterType.FLOAT64_ARRAY, [1.0, 2])
        self.assertEqual(check_parameter_value(ParameterType.INT64_ARRAY, [1, 2]), (1, 2))
        self.assertEqual(check_parameter_value(ParameterType.BYTE_ARRAY, bytearray(b"ab")), b"ab")

    def test_infer(self):
        self.assertEqual(infer_parameter_type(True), ParameterType.BOOL)
        self.assertEqual(infer_parameter_type(3), ParameterType.INT64)
        self.assertEqual(infer_parameter_type(0.5), ParameterType.FLOAT64)
        self.assertEqual(infer_parameter_type(["a"]), ParameterType.STRING_ARRAY)
        self.assertEqual(infer_parameter_type(b"\x00"), ParameterType.BYTE_ARRAY)
        with self.assertRaises(ParameterTypeError):
            infer_parameter_type([])

    def test_parse_operator_text(self):
        self.assertEqual(parse_parameter_text(ParameterType.FLOAT64, "2"), 2.0)
        self.assertIsInstance(parse_parameter_text(ParameterType.FLOAT64, "2"), float)
        self.assertEqual(parse_parameter_text(ParameterType.STRING, "hello"), "hello")
        self.assertEqual(parse_parameter_text(ParameterType.STRING, '"quoted"'), "quoted")
        self.assertEqual(parse_parameter_text(ParameterType.STRING, "42"), "42")
        self.assertEqual(parse_parameter_text(ParameterType.INT64_ARRAY, "[1, 2]"), [1, 2])
        self.assertEqual(parse_parameter_text(ParameterType.BOOL, "true"), True)
        with self.assertRaises(ParameterTypeError):
            parse_parameter_text(ParameterType.INT64, "not a number")


class TestParameterStore(unittest.TestCase):

    def setUp(self):
        self.events = []
        self.store = ParameterStore("/camera", on_change=self.events.append)

    def test_declare_get_set(self):
        self.store.declare("rate", 30)
        self.assertEqual(self.store.get("rate"), 30)
        self.store.set("rate", 15)
        self.assertEqual(self.store.get("rate"), 15)
        self.assertEqual([e["kind"] for e in self.events], ["declared", "changed"])
        self.assertEqual(self.events[-1]["value"], "15")
        self.assertEqual(self.events[-1]["type"], "int64")

    def test_default_from_declared_type(self):
        self.store.declare("frame_id", declared_type=ParameterType.STRING)
        self.assertEqual(self.store.get("frame_id"), "")

    def test_type_is_fixed_at_declaration(self):
        self.store.declare("gain", 1.5)
        with self.assertRaises(ParameterTypeError):
            self.store.set("gain", "loud")
        self.assertEqual(self.store.get("gain"), 1.5)
        self.assertEqual(len(self.events), 1)

    def test_read_only(self):
        self.store.declare("serial", "A123", read_only=True)
        with self.assertRaises(ParameterAccessError):
            self.store.set("serial", "B456")

    def test_unknown_and_duplicate(self):
        with self.assertRaises(UnknownParameterError):
            self.store.get("missing")
        with self.assertRaises(UnknownParameterError):
            self.store.set("missing", 1)
        self.store.declare("rate", 30)
        with self.assertRaises(ValidationError):
            self.store.declare("rate", 30)
        with self.assertRaises(ValidationError):
            self.store.declare("", 1)

    def test_list_by_prefix(self):
        for name in ("camera.exposure", "camera.gain", "rate"):
            self.store.declare(name, 1)
        self.assertEqual(self.store.list("camera."), ["camera.exposure", "camera.gain"])
        self.assertEqual(self.store.list(), ["camera.exposure", "camera.gain", "rate"])

    def test_randomized_declare_and_set(self):
        rng = np.random.default_rng(99)
        types = list(ParameterType)
        scalars = {
            ParameterType.BOOL: lambda: bool(rng.integers(2)),
            ParameterType.INT64: lambda: int(rng.integers(-10**9, 10**9)),
            ParameterType.FLOAT64: lambda: float(rng.normal(0.0, 100.0)),
            ParameterType.STRING: lambda: f"value-{rng.integers(1000)}",
        }
        elements = {
            ParameterType.BOOL_ARRAY: ParameterType.BOOL, ParameterType.INT64_ARRAY: ParameterType.INT64,
            ParameterType.FLOAT64_ARRAY: ParameterType.FLOAT64, ParameterType.STRING_ARRAY: ParameterType.STRING,
        }

        def value_of(ptype):
            if ptype in scalars:
                return scalars[ptype]()
            if ptype == ParameterType.BYTE_ARRAY:
                return bytes(rng.integers(0, 256, size=int(rng.integers(1, 6))).tolist())
            # never empty: an empty list fits every array type
            return [scalars[elements[ptype]]() for _ in range(int(rng.integers(1, 4)))]

        names = [f"p{i}" for i in range(12)]
        model = {}   # name -> (type, stored value, read_only)
        successes = 0
        for step in range(3000):
            name = names[int(rng.integers(len(names)))]
            ptype = types[int(rng.integers(len(types)))]
            value = value_of(ptype)
            stored = tuple(value) if isinstance(value, list) else value
            if rng.random() < 0.3:
                read_only = bool(rng.random() < 0.2)
                if name in model:
                    with self.assertRaises(ValidationError):
                        self.store.declare(name, value, read_only=read_only)
                else:
                    self.store.declare(name, value, read_only=read_only)
                    model[name] = (ptype, stored, read_only)
                    successes += 1
            elif name not in model:
                with self.assertRaises(UnknownParameterError):
                    self.store.set(name, value)
            elif model[name][2]:
                with self.assertRaises(ParameterAccessError):
                    self.store.set(name, value)
            elif model[name][0] != ptype:
                with self.assertRaises(ParameterTypeError):
                    self.store.set(name, value)
            else:
                self.store.set(name, value)
                model[name] = (ptype, stored, False)
                successes += 1

            self.assertEqual(self.store.list(), sorted(model), f"step {step}")
            record = self.store.describe(name) if name in model else None
            if record is not None:
                self.assertEqual((record.declared_type, record.value, record.read_only), model[name],
                                 f"step {step}")
        self.assertEqual(len(self.events), successes)
        for name, (ptype, stored, read_only) in model.items():
            record = self.store.describe(name)
            self.assertEqual(record.declared_type, ptype)
            self.assertEqual(record.value, stored)


class TestNodeParameters(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.ctx = self.domain.context()
        self.camera = self.ctx.create_node("camera")

    def tearDown(self):
        self.domain.close()

    def test_module_helpers(self):
        declare_parameter(self.camera, ParameterRecord("exposure", ParameterType.FLOAT64, 0.01))
        set_parameter(self.camera, "exposure", 0.02)
        self.assertEqual(get_parameter(self.camera, "exposure"), 0.02)
        self.assertEqual(list_parameters(self.camera), ["exposure"])

    def test_changes_published_as_events(self):
        events = []
        self.ctx.create_node("monitor").create_subscription(
            PARAMETER_EVENTS_TOPIC, PARAMETER_EVENT, lambda msg: events.append((msg.node, msg.kind, msg.name)),
            QosProfile(depth=100),
        )
        self.camera.declare_parameter("rate", 30)
        self.camera.set_parameter("rate", 10)
        self.domain.spin_until(lambda: len(events) == 2, 1.0)
        self.assertEqual(events, [("/camera", "declared", "rate"), ("/camera", "changed", "rate")])

    def test_lifecycle_node_still_reports_parameter_changes(self):
        events = []
        self.ctx.create_node("monitor").create_subscription(
            PARAMETER_EVENTS_TOPIC, PARAMETER_EVENT, lambda msg: events.append(msg.name), QosProfile(depth=100),
        )
        managed = self.ctx.create_node("managed", node_class=LifecycleNode)
        managed.declare_parameter("threshold", 0.5)
        self.domain.spin_until(lambda: events, 1.0)
        self.assertEqual(events, ["threshold"])

    def test_service_names(self):
        names = parameter_service_names("/camera")
        self.assertEqual(names["get"], "/camera/param/get")
        self.assertIn("/camera/param/set", [name for name, _ in
                                            self.ctx.participant.graph.service_names_and_types()])


class TestRemoteParameters(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.camera = self.domain.context().create_node("camera")
        self.camera.declare_parameter("rate", 30)
        self.camera.declare_parameter("gains", [1.0, 2.0])
        self.camera.declare_parameter("serial", "A123", read_only=True, description="factory serial")
        operator = self.domain.context().create_node("operator")
        self.client = ParameterClient(operator, "/camera")
        self.assertTrue(self.client.wait_for_service(self.domain.executor))

    def tearDown(self):
        self.domain.close()

    def test_get_and_set(self):
        executor = self.domain.executor
        self.assertEqual(self.client.get("rate", executor), 30)
        self.assertTrue(self.client.set("rate", 12, executor))
        self.assertEqual(self.camera.get_parameter("rate"), 12)
        self.assertEqual(self.client.get("gains", executor), (1.0, 2.0))

    def test_list_and_describe(self):
        executor = self.domain.executor
        self.assertEqual(self.client.list(executor), ["gains", "rate", "serial"])
        self.assertEqual(self.client.list(executor, prefix="ga"), ["gains"])
        description = self.client.describe("serial", executor)
        self.assertEqual(description["type"], "string")
        self.assertTrue(description["read_only"])
        self.assertEqual(description["description"], "factory serial")

    def test_remote_errors_keep_their_kind(self):
        executor = self.domain.executor
        with self.assertRaises(UnknownParameterError):
            self.client.get("missing", executor)
        with self.assertRaises(ParameterTypeError):
            self.client.set("rate", "fast", executor)
        with self.assertRaises(ParameterAccessError):
            self.client.set("serial", "B456", executor)
        self.assertEqual(self.camera.get_parameter("rate"), 30)


if __name__ == "__main__":
    unittest.main()
