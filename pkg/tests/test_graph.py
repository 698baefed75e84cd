import unittest

import numpy as np

from src.graph.composition import COMPONENTS, Container, compose, register_component
from src.graph.events import EventKind
from src.graph.names import fully_qualified, normalize_namespace, resolve_topic
from src.interfaces import builtin
from src.shared.errors import NameConflictError, SchemaError, ValidationError
from src.transport.impairment import ImpairmentConfig
from src.transport.qos import (
    DEFAULT_QOS, SENSOR_DATA_QOS, Durability, HistoryKind, Liveliness, QosProfile, Reliability,
)
from tests.support import SimDomain

KEEP_ALL_QOS = QosProfile(history=HistoryKind.KEEP_ALL)
LATCHED_5 = QosProfile(durability=Durability.TRANSIENT_LOCAL, depth=5)


class TestNames(unittest.TestCase):

    def test_fully_qualified(self):
        self.assertEqual(fully_qualified("camera", "/front"), "/front/camera")
        self.assertEqual(fully_qualified("camera", ""), "/camera")
        self.assertEqual(fully_qualified("camera", "front/"), "/front/camera")

    def test_invalid_node_name(self):
        for bad in ("9bad", "", "has space", "a-b"):
            with self.assertRaises(ValidationError):
                fully_qualified(bad, "")

    def test_namespace_normalization(self):
        self.assertEqual(normalize_namespace("/"), "")
        self.assertEqual(normalize_namespace("robot1/arm"), "/robot1/arm")
        with self.assertRaises(ValidationError):
            normalize_namespace("/bad-ns")

    def test_topic_resolution(self):
        self.assertEqual(resolve_topic("/abs", "/ns", "/ns/node"), "/abs")
        self.assertEqual(resolve_topic("rel", "/ns", "/ns/node"), "/ns/rel")
        self.assertEqual(resolve_topic("~/private", "/ns", "/ns/node"), "/ns/node/private")
        with self.assertRaises(ValidationError):
            resolve_topic("", "", "/node")
        with self.assertRaises(ValidationError):
            resolve_topic("/a//b", "", "/node")


class TestNodes(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()

    def tearDown(self):
        self.domain.close()

    def test_duplicate_name_in_context(self):
        ctx = self.domain.context()
        ctx.create_node("camera", "/front")
        with self.assertRaises(NameConflictError):
            ctx.create_node("camera", "/front")

    def test_node_visible_to_peer_within_two_announce_periods(self):
        a, b = self.domain.context(), self.domain.context()
        a.create_node("camera", "/front")
        observer = b.create_node("observer")
        self.assertTrue(self.domain.spin_until(lambda: "/front/camera" in observer.get_node_names(), 2.0))

    def test_remote_name_conflict(self):
        a, b = self.domain.context(), self.domain.context()
        a.create_node("camera", "/front")
        observer = b.create_node("observer")
        self.domain.spin_until(lambda: "/front/camera" in observer.get_node_names(), 2.0)
        with self.assertRaises(NameConflictError):
            b.create_node("camera", "/front")

    def test_node_list_tracks_destroyed_nodes(self):
        a, b = self.domain.context(), self.domain.context()
        camera = a.create_node("camera")
        observer = b.create_node("observer")
        self.domain.spin_until(lambda: "/camera" in observer.get_node_names(), 2.0)
        camera.destroy()
        self.assertTrue(self.domain.spin_until(lambda: "/camera" not in observer.get_node_names(), 2.0))
        self.assertEqual(observer.get_node_names(), ["/observer"])

    def test_endpoints_die_with_node(self):
        a, b = self.domain.context(), self.domain.context()
        talker = a.create_node("talker")
        talker.create_publisher("/chatter", builtin.STRING)
        observer = b.create_node("observer")
        self.domain.spin_until(lambda: observer.count_publishers("/chatter") == 1, 2.0)
        talker.destroy()
        self.assertTrue(self.domain.spin_until(lambda: observer.count_publishers("/chatter") == 0, 2.0))

    def test_context_manager_shuts_down(self):
        with self.domain.context() as ctx:
            ctx.create_node("temp")
        self.assertFalse(ctx.ok)
        self.assertEqual(ctx.nodes, {})


class TestPublishSubscribe(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()

    def tearDown(self):
        self.domain.close()

    def pair(self, pub_qos=DEFAULT_QOS, sub_qos=DEFAULT_QOS, descriptor=builtin.STRING,
             sub_descriptor=None, impairment=None):
        pub_ctx = self.domain.context(impairment=impairment)
        sub_ctx = self.domain.context()
        received = []
        publisher = pub_ctx.create_node("talker").create_publisher("/chatter", descriptor, pub_qos)
        subscription = sub_ctx.create_node("listener").create_subscription(
            "/chatter", sub_descriptor or descriptor, lambda msg: received.append(msg.data), sub_qos,
        )
        return publisher, subscription, received

    def wait_matched(self, publisher, subscription):
        self.assertTrue(self.domain.spin_until(
            lambda: publisher.matched_count == 1 and subscription.matched_count == 1, 5.0,
        ))

    def test_message_flows_between_contexts(self):
        publisher, subscription, received = self.pair()
        self.wait_matched(publisher, subscription)
        for i in range(3):
            publisher.publish(builtin.STRING.new(data=f"hello {i}"))
        self.assertTrue(self.domain.spin_until(lambda: len(received) == 3, 2.0))
        self.assertEqual(received, ["hello 0", "hello 1", "hello 2"])
        self.assertEqual(publisher.serialization_count, 3)
        self.assertFalse(subscription.last_info.intra_process)

    def test_publish_accepts_dict(self):
        publisher, subscription, received = self.pair()
        self.wait_matched(publisher, subscription)
        publisher.publish({"data": "from dict"})
        self.domain.spin_until(lambda: received, 2.0)
        self.assertEqual(received, ["from dict"])

    def test_schema_mismatch_on_publish(self):
        publisher, _, _ = self.pair()
        with self.assertRaises(SchemaError):
            publisher.publish(builtin.INT64.new(data=1))

    def test_reliable_delivery_under_loss(self):
        publisher, subscription, received = self.pair(
            KEEP_ALL_QOS, KEEP_ALL_QOS, descriptor=builtin.INT64,
            impairment=ImpairmentConfig(drop_probability=0.2, rng_seed=5),
        )
        self.wait_matched(publisher, subscription)
        for i in range(60):
            publisher.publish(builtin.INT64.new(data=i))
            self.domain.executor.spin_once(0.01)
        self.assertTrue(self.domain.spin_until(lambda: len(received) == 60, 30.0))
        self.assertEqual(received, list(range(60)))
        self.assertGreater(publisher.participant.diagnostics.count("impair_dropped"), 0)

    def test_reliable_exactly_once_randomized(self):
        rng = np.random.default_rng(20240611)
        total = 1000
        for trial in range(5):
            keep_all = bool(rng.integers(2))
            depth = int(rng.integers(1, 33))
            drop = float(rng.uniform(0.0, 0.3))
            seed = int(rng.integers(1 << 31))
            qos = QosProfile(history=HistoryKind.KEEP_ALL if keep_all else HistoryKind.KEEP_LAST, depth=depth)
            with self.subTest(trial=trial, keep_all=keep_all, depth=depth, drop=round(drop, 3)):
                domain = SimDomain()
                try:
                    # long participant lease so lost announcements never expire the match
                    pub_ctx = domain.context(impairment=ImpairmentConfig(drop_probability=drop, rng_seed=seed),
                                             lease_duration=600.0)
                    sub_ctx = domain.context(lease_duration=600.0)
                    received = []
                    publisher = pub_ctx.create_node("talker").create_publisher("/count", builtin.INT64, qos)
                    subscription = sub_ctx.create_node("listener").create_subscription(
                        "/count", builtin.INT64, lambda msg: received.append(msg.data), qos)
                    self.assertTrue(domain.spin_until(
                        lambda: publisher.matched_count == 1 and subscription.matched_count == 1, 30.0))
                    # never more unacknowledged samples in flight than the history can hold
                    window = 32 if keep_all else depth
                    deadline = domain.clock.now() + 900.0
                    sent = 0
                    while sent < total and domain.clock.now() < deadline:
                        if sent - len(received) < window:
                            publisher.publish(builtin.INT64.new(data=sent))
                            sent += 1
                            domain.executor.spin_once(0.0)
                        else:
                            domain.executor.spin_once(0.01)
                    self.assertTrue(domain.spin_until(lambda: len(received) >= total, 120.0))
                    domain.spin(1.0)
                    self.assertEqual(received, list(range(total)))
                    if drop > 0.05:
                        self.assertGreater(pub_ctx.diagnostics.count("impair_dropped"), 0)
                finally:
                    domain.close()

    def test_best_effort_delivery_ratio(self):
        total = 10_000
        for drop in (0.05, 0.10, 0.20):
            with self.subTest(drop=drop):
                domain = SimDomain()
                try:
                    pub_ctx = domain.context(impairment=ImpairmentConfig(drop_probability=drop, rng_seed=42),
                                             lease_duration=600.0)
                    sub_ctx = domain.context(lease_duration=600.0)
                    received = []
                    publisher = pub_ctx.create_node("talker").create_publisher(
                        "/count", builtin.INT64, SENSOR_DATA_QOS)
                    subscription = sub_ctx.create_node("listener").create_subscription(
                        "/count", builtin.INT64, lambda msg: received.append(msg.data), SENSOR_DATA_QOS)
                    self.assertTrue(domain.spin_until(
                        lambda: publisher.matched_count == 1 and subscription.matched_count == 1, 30.0))
                    for i in range(total):
                        publisher.publish(builtin.INT64.new(data=i))
                        domain.executor.spin_once(0.0)
                    domain.spin(0.5)
                    ratio = len(received) / total
                    # binomial standard deviation is at most 0.004 here
                    self.assertAlmostEqual(ratio, 1 - drop, delta=0.02)
                    self.assertEqual(received, sorted(set(received)))
                finally:
                    domain.close()

    def test_incompatible_qos_notifies_both_sides(self):
        publisher, subscription, received = self.pair(pub_qos=SENSOR_DATA_QOS, sub_qos=DEFAULT_QOS)
        self.domain.spin(2.5)
        publisher.publish(builtin.STRING.new(data="lost"))
        self.domain.spin(0.5)
        self.assertEqual(received, [])
        sub_events = subscription.events_of(EventKind.INCOMPATIBLE_QOS)
        self.assertEqual(len(sub_events), 1)
        self.assertEqual(sub_events[0].detail["reasons"], ["RELIABILITY"])
        self.assertIn(EventKind.INCOMPATIBLE_QOS, [e.kind for e in publisher.events])
        self.assertEqual(publisher.matched_count, 0)

    def test_type_mismatch_never_delivers(self):
        publisher, subscription, received = self.pair(descriptor=builtin.STRING, sub_descriptor=builtin.INT64)
        self.domain.spin(2.5)
        publisher.publish(builtin.STRING.new(data="x"))
        self.domain.spin(0.5)
        self.assertEqual(received, [])
        self.assertEqual(len(subscription.events_of(EventKind.TYPE_MISMATCH)), 1)

    def test_many_to_many(self):
        pub_ctx, sub_ctx = self.domain.context(), self.domain.context()
        publisher = pub_ctx.create_node("talker").create_publisher("/chatter", builtin.STRING)
        listener = sub_ctx.create_node("listener")
        first, second = [], []
        listener.create_subscription("/chatter", builtin.STRING, lambda m: first.append(m.data))
        listener.create_subscription("/chatter", builtin.STRING, lambda m: second.append(m.data))
        self.domain.spin_until(lambda: publisher.matched_count == 2, 5.0)
        publisher.publish(builtin.STRING.new(data="both"))
        self.domain.spin_until(lambda: first and second, 2.0)
        self.assertEqual((first, second), (["both"], ["both"]))

    def test_transient_local_late_joiner_gets_last_depth(self):
        pub_ctx = self.domain.context()
        publisher = pub_ctx.create_node("talker").create_publisher("/latched", builtin.INT64, LATCHED_5)
        for i in range(1, 9):
            publisher.publish(builtin.INT64.new(data=i))
        sub_ctx = self.domain.context()
        received = []
        sub_ctx.create_node("late").create_subscription(
            "/latched", builtin.INT64, lambda m: received.append(m.data),
            QosProfile(durability=Durability.TRANSIENT_LOCAL, depth=10),
        )
        self.assertTrue(self.domain.spin_until(lambda: len(received) == 5, 5.0))
        self.domain.spin(0.5)
        self.assertEqual(received, [4, 5, 6, 7, 8])

    def test_volatile_late_joiner_waits_for_next_publish(self):
        pub_ctx = self.domain.context()
        publisher = pub_ctx.create_node("talker").create_publisher("/chatter", builtin.INT64)
        publisher.publish(builtin.INT64.new(data=1))
        sub_ctx = self.domain.context()
        received = []
        subscription = sub_ctx.create_node("late").create_subscription(
            "/chatter", builtin.INT64, lambda m: received.append(m.data),
        )
        self.wait_matched(publisher, subscription)
        self.domain.spin(0.5)
        self.assertEqual(received, [])
        publisher.publish(builtin.INT64.new(data=2))
        self.domain.spin_until(lambda: received, 2.0)
        self.assertEqual(received, [2])

    def test_large_message_is_fragmented(self):
        publisher, subscription, received = self.pair(descriptor=builtin.BYTE_ARRAY)
        self.wait_matched(publisher, subscription)
        blob = bytes(i % 251 for i in range(100_000))
        publisher.publish(builtin.BYTE_ARRAY.new(data=blob))
        self.assertTrue(self.domain.spin_until(lambda: received, 5.0))
        self.assertEqual(received[0], blob)


class TestIntraProcess(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()

    def tearDown(self):
        self.domain.close()

    def test_same_context_pair_skips_serialization(self):
        ctx = self.domain.context()
        node = ctx.create_node("both")
        received = []
        publisher = node.create_publisher("/chatter", builtin.STRING)
        subscription = node.create_subscription("/chatter", builtin.STRING, received.append)
        message = builtin.STRING.new(data="shared")
        publisher.publish(message)
        self.assertEqual(self.domain.executor.spin_once(0.0), 1)
        self.assertIs(received[0], message)
        self.assertEqual(publisher.serialization_count, 0)
        self.assertEqual(ctx.diagnostics.count("serializations"), 0)
        self.assertTrue(subscription.last_info.intra_process)

    def test_disabled_intra_process_uses_transport(self):
        ctx = self.domain.context(intra_process=False)
        node = ctx.create_node("both")
        received = []
        publisher = node.create_publisher("/chatter", builtin.STRING)
        node.create_subscription("/chatter", builtin.STRING, lambda m: received.append(m.data))
        for i in range(3):
            publisher.publish(builtin.STRING.new(data=str(i)))
        self.assertTrue(self.domain.spin_until(lambda: len(received) == 3, 2.0))
        self.assertEqual(received, ["0", "1", "2"])
        self.assertEqual(publisher.serialization_count, 3)

    def test_internal_and_external_readers_see_same_sequence(self):
        ctx, other = self.domain.context(), self.domain.context()
        node = ctx.create_node("talker")
        internal, external = [], []
        publisher = node.create_publisher("/chatter", builtin.STRING)
        node.create_subscription("/chatter", builtin.STRING, lambda m: internal.append(m.data))
        remote = other.create_node("listener").create_subscription(
            "/chatter", builtin.STRING, lambda m: external.append(m.data),
        )
        self.domain.spin_until(lambda: publisher.matched_count == 2 and remote.matched_count == 1, 5.0)
        for i in range(5):
            publisher.publish(builtin.STRING.new(data=f"m{i}"))
        self.domain.spin_until(lambda: len(external) == 5, 2.0)
        self.assertEqual(internal, external)
        self.assertEqual(publisher.serialization_count, 5)

    def test_transient_local_history_replayed_in_process(self):
        ctx = self.domain.context()
        node = ctx.create_node("talker")
        publisher = node.create_publisher("/latched", builtin.INT64, LATCHED_5)
        for i in range(1, 9):
            publisher.publish(builtin.INT64.new(data=i))
        received = []
        node.create_subscription("/latched", builtin.INT64, lambda m: received.append(m.data),
                                 QosProfile(durability=Durability.TRANSIENT_LOCAL, depth=10))
        self.domain.executor.spin_once(0.0)
        self.assertEqual(received, [4, 5, 6, 7, 8])
        self.assertEqual(publisher.serialization_count, 0)

    def test_queue_bounded_by_depth(self):
        ctx = self.domain.context()
        node = ctx.create_node("both")
        publisher = node.create_publisher("/chatter", builtin.INT64, QosProfile(depth=3))
        subscription = node.create_subscription("/chatter", builtin.INT64, lambda m: None, QosProfile(depth=3))
        for i in range(10):
            publisher.publish(builtin.INT64.new(data=i))
        self.assertEqual(subscription.queued, 3)
        self.assertEqual(subscription.take().data, 7)


class TestExecutor(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.ctx = self.domain.context()
        self.node = self.ctx.create_node("worker")

    def tearDown(self):
        self.domain.close()

    def test_nothing_ready_returns_zero(self):
        self.assertEqual(self.domain.executor.spin_once(0.05), 0)

    def test_timer_rate(self):
        timer = self.node.create_timer(0.1, lambda: None)
        self.domain.spin(1.0)
        self.assertGreaterEqual(timer.fire_count, 9)
        self.assertLessEqual(timer.fire_count, 11)

    def test_timer_rejects_bad_period(self):
        with self.assertRaises(ValidationError):
            self.node.create_timer(0, lambda: None)

    def test_canceled_timer_stops(self):
        timer = self.node.create_timer(0.1, lambda: None)
        self.domain.spin(0.35)
        timer.cancel()
        fired = timer.fire_count
        self.domain.spin(0.5)
        self.assertEqual(timer.fire_count, fired)

    def test_callback_errors_are_contained(self):
        def explode(_):
            raise RuntimeError("boom")
        publisher = self.node.create_publisher("/chatter", builtin.STRING)
        self.node.create_subscription("/chatter", builtin.STRING, explode)
        publisher.publish(builtin.STRING.new(data="x"))
        with self.assertLogs("src.graph.executor", level="ERROR"):
            self.assertEqual(self.domain.executor.spin_once(0.0), 1)
        self.assertEqual(self.domain.executor.callback_errors, 1)
        self.assertEqual(self.ctx.diagnostics.count("callback_errors"), 1)
        self.assertEqual(self.ctx.diagnostics.severity, "warning")

    def test_repeated_callback_errors_become_critical(self):
        publisher = self.node.create_publisher("/chatter", builtin.STRING)
        self.node.create_subscription("/chatter", builtin.STRING, lambda m: 1 / 0)
        for expected in ("warning", "warning", "critical"):
            publisher.publish(builtin.STRING.new(data="x"))
            with self.assertLogs("src.graph.executor", level="ERROR"):
                self.domain.executor.spin_once(0.0)
            self.assertEqual(self.ctx.diagnostics.severity, expected)
        self.assertEqual(self.ctx.diagnostics.errors[-1]["service"], "executor")
        self.assertIn("division by zero", self.ctx.diagnostics.errors[-1]["message"])

    def test_fail_fast_reraises(self):
        self.domain.executor.fail_fast = True
        publisher = self.node.create_publisher("/chatter", builtin.STRING)
        self.node.create_subscription("/chatter", builtin.STRING, lambda m: 1 / 0)
        publisher.publish(builtin.STRING.new(data="x"))
        with self.assertLogs("src.graph.executor", level="ERROR"):
            with self.assertRaises(ZeroDivisionError):
                self.domain.executor.spin_once(0.0)

    def test_spin_inside_callback_is_rejected(self):
        publisher = self.node.create_publisher("/chatter", builtin.STRING)
        self.node.create_subscription("/chatter", builtin.STRING,
                                      lambda m: self.domain.executor.spin_once(0.0))
        publisher.publish(builtin.STRING.new(data="x"))
        with self.assertLogs("src.graph.executor", level="ERROR"):
            self.domain.executor.spin_once(0.0)
        self.assertEqual(self.domain.executor.callback_errors, 1)

    def test_deadline_missed_events(self):
        qos = QosProfile(deadline=0.1)
        publisher = self.node.create_publisher("/beat", builtin.EMPTY, qos)
        missed = []
        subscription = self.node.create_subscription(
            "/beat", builtin.EMPTY, lambda m: None, qos,
            event_callbacks={EventKind.DEADLINE_MISSED: missed.append},
        )
        publisher.publish(builtin.EMPTY.new())
        self.domain.spin(0.35)
        self.assertEqual(sum(e.count for e in subscription.events_of(EventKind.DEADLINE_MISSED)), 3)
        self.assertEqual(len(missed), len(subscription.events_of(EventKind.DEADLINE_MISSED)))

    def test_manual_liveliness_lapses_and_recovers(self):
        qos = QosProfile(liveliness=Liveliness.MANUAL, lease_duration=0.5)
        publisher = self.node.create_publisher("/alive", builtin.EMPTY, qos)
        subscription = self.node.create_subscription("/alive", builtin.EMPTY, lambda m: None, qos)
        self.domain.spin(1.0)
        latest = subscription.events_of(EventKind.LIVELINESS_CHANGED)[-1]
        self.assertEqual(latest.detail["not_alive_count"], 1)
        publisher.assert_liveliness()
        self.domain.spin(0.05)
        latest = subscription.events_of(EventKind.LIVELINESS_CHANGED)[-1]
        self.assertEqual(latest.detail["alive_count"], 1)

    def test_lifespan_drops_stale_messages(self):
        qos = QosProfile(reliability=Reliability.BEST_EFFORT, lifespan=0.1)
        publisher = self.node.create_publisher("/short", builtin.EMPTY, qos)
        subscription = self.node.create_subscription("/short", builtin.EMPTY, lambda m: None, qos)
        publisher.publish(builtin.EMPTY.new())
        self.domain.clock.advance(0.2)
        self.assertIsNone(subscription.take())
        self.assertEqual(subscription.expired_count, 1)


class TestComposition(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.ctx = self.domain.context()
        self.received = []

    def tearDown(self):
        self.domain.close()

    def talker(self, context):
        node = context.create_node("talker")
        node.pub = node.create_publisher("/chatter", builtin.STRING)
        return node

    def listener(self, context):
        node = context.create_node("listener")
        node.create_subscription("/chatter", builtin.STRING, lambda m: self.received.append(m.data))
        return node

    def test_composed_nodes_share_participant_and_intra_path(self):
        container = compose(self.ctx, self.talker, self.listener)
        talker = container.node("/talker")
        self.assertIs(talker.participant, container.node("/listener").participant)
        talker.pub.publish(builtin.STRING.new(data="hi"))
        self.domain.executor.spin_once(0.0)
        self.assertEqual(self.received, ["hi"])
        self.assertEqual(talker.pub.serialization_count, 0)

    def test_split_across_contexts_still_works(self):
        other = self.domain.context()
        talker = compose(self.ctx, self.talker).node("/talker")
        compose(other, self.listener)
        self.domain.spin_until(lambda: talker.pub.matched_count == 1, 5.0)
        talker.pub.publish(builtin.STRING.new(data="hi"))
        self.domain.spin_until(lambda: self.received, 2.0)
        self.assertEqual(self.received, ["hi"])
        self.assertEqual(talker.pub.serialization_count, 1)

    def test_registered_component_by_name(self):
        register_component("test_listener")(self.listener)
        try:
            container = Container(self.ctx)
            node = container.add_by_name("test_listener")
            self.assertEqual(node.fqn, "/listener")
            with self.assertRaises(ValidationError):
                container.add_by_name("missing")
            container.destroy()
            self.assertEqual(self.ctx.nodes, {})
        finally:
            COMPONENTS.pop("test_listener", None)

    def test_duplicate_component_conflicts(self):
        with self.assertRaises(NameConflictError):
            compose(self.ctx, self.talker, self.talker)


if __name__ == "__main__":
    unittest.main()
