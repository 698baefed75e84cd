import os
import tempfile
import unittest
from dataclasses import replace

from src.discovery.endpoints import EndpointKind
from src.interfaces import builtin
from src.security.aead import PairSession, ReplayWindow
from src.security.context import SecurityContext
from src.security.handshake import HandshakeEndpoint, handshake
from src.security.identity import (
    check_certificate, create_trust_anchor, generate_identity, scheme_of, sign, verify_certificate,
    verify_signature,
)
from src.security.keystore import ContainerKind, Keystore, pack_container, unpack_container
from src.security.permissions import (
    Direction, PermissionRule, authorize, create_permissions, verify_permissions,
)
from src.shared.errors import (
    AccessDeniedError, AuthenticationError, HandshakeError, KeystoreError, RekeyRequiredError,
    ReplayError, SecurityError,
)
from src.transport.packet import PacketHeader, PacketKind, decode_header, encode_packet
from tests.support import SimDomain

# Every node publishes parameter events and serves its parameters.
INFRASTRUCTURE_RULES = ["PUB:/parameter_events", "PUB:/svc/*", "SUB:/svc/*"]

ALICE_GUID = bytes([1] * 12) + bytes(4)
BOB_GUID = bytes([2] * 12) + bytes(4)


class TestPermissions(unittest.TestCase):

    def setUp(self):
        self.anchor = create_trust_anchor("test-anchor")
        self.doc = create_permissions(self.anchor, "camera", ["PUB:/scan*", "SUB:cmd_vel"])

    def test_deny_by_default(self):
        self.assertTrue(authorize(self.doc, Direction.PUB, "/scan"))
        self.assertTrue(authorize(self.doc, Direction.PUB, "/scan_front"))
        self.assertFalse(authorize(self.doc, Direction.SUB, "/scan"))
        self.assertFalse(authorize(self.doc, Direction.PUB, "/odom"))

    def test_leading_slash_not_significant(self):
        self.assertTrue(authorize(self.doc, Direction.SUB, "/cmd_vel"))
        self.assertTrue(authorize(self.doc, Direction.SUB, "cmd_vel"))

    def test_signed_by_anchor(self):
        self.assertTrue(verify_permissions(self.doc, self.anchor.public_key))
        self.assertFalse(verify_permissions(self.doc, create_trust_anchor().public_key))
        widened = replace(self.doc, rules=self.doc.rules + (PermissionRule(Direction.PUB, "*"),))
        self.assertFalse(verify_permissions(widened, self.anchor.public_key))

    def test_rule_parsing(self):
        self.assertEqual(str(PermissionRule.parse(" sub : /scan ")), "SUB:/scan")
        for bad in ("/scan", "SEND:/scan", "PUB:"):
            with self.assertRaises(SecurityError):
                PermissionRule.parse(bad)

    def test_anchor_private_key_required(self):
        with self.assertRaises(SecurityError):
            create_permissions(self.anchor.public_only(), "camera", ["PUB:*"])


class TestIdentity(unittest.TestCase):

    def setUp(self):
        self.anchor = create_trust_anchor()
        self.identity = generate_identity(self.anchor, "camera", validity_days=1, now=0.0)

    def test_certificate_validity(self):
        cert = self.identity.certificate
        self.assertTrue(verify_certificate(cert, self.anchor.public_key))
        self.assertTrue(verify_certificate(cert, self.anchor.public_key, now=100.0))
        self.assertFalse(verify_certificate(cert, self.anchor.public_key, now=2 * 86400.0))
        self.assertFalse(verify_certificate(cert, create_trust_anchor().public_key))

    def test_tampered_certificate(self):
        forged = replace(self.identity.certificate, subject="planner")
        self.assertFalse(verify_certificate(forged, self.anchor.public_key))
        with self.assertRaises(AuthenticationError):
            check_certificate(forged, self.anchor.public_key, 100.0)

    def test_expired_certificate_rejected(self):
        with self.assertRaises(AuthenticationError):
            check_certificate(self.identity.certificate, self.anchor.public_key, 3 * 86400.0)

    def test_certificate_bytes(self):
        cert = self.identity.certificate
        self.assertEqual(type(cert).from_bytes(cert.to_bytes()), cert)
        with self.assertRaises(AuthenticationError):
            type(cert).from_bytes(b"\x00\x01")

    def test_issuing_needs_private_key(self):
        with self.assertRaises(SecurityError):
            generate_identity(self.anchor.public_only(), "camera")
        with self.assertRaises(SecurityError):
            generate_identity(self.anchor, "")

    def test_signature_schemes(self):
        anchor = create_trust_anchor("fleet", scheme="ecdsa-p384")
        self.assertEqual(scheme_of(anchor.private_key), "ecdsa-p384")
        signature = sign(anchor.private_key, b"announcement")
        self.assertTrue(verify_signature(anchor.public_key, signature, b"announcement"))
        self.assertFalse(verify_signature(self.anchor.public_key, signature, b"announcement"))
        with self.assertRaises(SecurityError):
            create_trust_anchor(scheme="rsa-2048")

    def test_certificate_scheme_enforced(self):
        identity = generate_identity(self.anchor, "lidar", validity_days=1, now=0.0, scheme="ecdsa-p384")
        self.assertTrue(verify_certificate(identity.certificate, self.anchor.public_key, now=100.0))
        check_certificate(identity.certificate, self.anchor.public_key, 100.0, "ecdsa-p384")
        with self.assertRaises(AuthenticationError):
            check_certificate(identity.certificate, self.anchor.public_key, 100.0, "ecdsa-p256")


class TestKeystore(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.keystore = Keystore(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_store_and_load(self):
        anchor = self.keystore.create_anchor("fleet")
        identity = generate_identity(anchor, "camera")
        self.keystore.store_identity(identity)
        self.keystore.store_permissions(create_permissions(anchor, "camera", ["PUB:/scan"]))

        loaded_anchor = self.keystore.load_anchor()
        self.assertEqual(loaded_anchor.name, "fleet")
        self.assertIsNone(loaded_anchor.private_key)
        self.assertIsNotNone(self.keystore.load_anchor(with_private=True).private_key)
        loaded = self.keystore.load_identity("camera")
        self.assertEqual(loaded.certificate, identity.certificate)
        self.assertTrue(verify_certificate(loaded.certificate, loaded_anchor.public_key))
        doc = self.keystore.load_permissions("camera")
        self.assertTrue(authorize(doc, Direction.PUB, "/scan"))
        self.assertIsNone(self.keystore.load_permissions("planner"))
        self.assertEqual(self.keystore.subjects(), ["camera"])

    def test_private_files_are_owner_only(self):
        self.keystore.create_anchor()
        mode = os.stat(os.path.join(self.tmp.name, "anchor", "anchor.key")).st_mode & 0o777
        self.assertEqual(mode, 0o600)

    def test_refuses_to_overwrite(self):
        anchor = self.keystore.create_anchor()
        with self.assertRaises(KeystoreError):
            self.keystore.create_anchor()
        identity = generate_identity(anchor, "camera")
        self.keystore.store_identity(identity)
        with self.assertRaises(KeystoreError):
            self.keystore.store_identity(identity)
        self.keystore.store_identity(identity, overwrite=True)

    def test_container_checks(self):
        body = b"payload"
        packed = pack_container(ContainerKind.CERTIFICATE, body)
        self.assertEqual(packed[:4], b"MKEY")
        self.assertEqual(unpack_container(packed, ContainerKind.CERTIFICATE), body)
        with self.assertRaises(KeystoreError):
            unpack_container(packed, ContainerKind.PERMISSIONS)
        with self.assertRaises(KeystoreError):
            unpack_container(b"XKEY" + packed[4:], ContainerKind.CERTIFICATE)
        with self.assertRaises(KeystoreError):
            unpack_container(packed[:-1], ContainerKind.CERTIFICATE)

    def test_missing_material(self):
        with self.assertRaises(KeystoreError):
            self.keystore.load_anchor()
        with self.assertRaises(KeystoreError):
            self.keystore.identity_dir("../escape")

    def test_security_context_from_keystore(self):
        anchor = self.keystore.create_anchor()
        self.keystore.store_identity(generate_identity(anchor, "camera"))
        context = SecurityContext.from_keystore(self.tmp.name, "camera")
        self.assertEqual(context.identity.subject, "camera")
        # no permissions document: nothing may be published
        self.assertFalse(context.allows(EndpointKind.PUBLISHER, "/scan"))
        with self.assertRaises(KeystoreError):
            SecurityContext.from_keystore(self.tmp.name, "")

    def test_keystore_scheme(self):
        keystore = Keystore(self.tmp.name, "ecdsa-p384")
        keystore.create_anchor()
        keystore.issue_identity("camera", 30)
        self.assertEqual(scheme_of(keystore.load_identity("camera").private_key), "ecdsa-p384")
        context = SecurityContext.from_keystore(self.tmp.name, "camera", signature_scheme="ecdsa-p384")
        self.assertEqual(context.signature_scheme, "ecdsa-p384")
        with self.assertRaises(KeystoreError):
            self.keystore.load_anchor()
        with self.assertRaises(KeystoreError):
            self.keystore.load_identity("camera")
        with self.assertRaises(KeystoreError):
            SecurityContext.from_keystore(self.tmp.name, "camera")

    def test_unsupported_scheme_creates_nothing(self):
        with self.assertRaises(KeystoreError):
            Keystore(self.tmp.name, "rsa-2048").create_anchor()
        self.assertFalse(os.path.exists(os.path.join(self.tmp.name, "anchor")))


class TestSessions(unittest.TestCase):

    def setUp(self):
        self.anchor = create_trust_anchor()
        self.alice = self.endpoint("alice", ALICE_GUID)
        self.bob = self.endpoint("bob", BOB_GUID)

    def endpoint(self, subject, guid, anchor=None):
        issuer = anchor or self.anchor
        identity = generate_identity(issuer, subject, now=0.0)
        permissions = create_permissions(issuer, subject, ["PUB:*"])
        return HandshakeEndpoint(identity, permissions, self.anchor.public_key, guid)

    def datagram(self, payload=b"hello", seq=1):
        return encode_packet(PacketHeader(PacketKind.DATA, ALICE_GUID, 42, seq=seq), payload)

    def test_handshake_derives_mirrored_keys(self):
        keys_a, keys_b = handshake(self.alice, self.bob, now=100.0)
        self.assertEqual(keys_a.send_key, keys_b.recv_key)
        self.assertEqual(keys_a.recv_key, keys_b.send_key)
        self.assertNotEqual(keys_a.send_key, keys_a.recv_key)
        self.assertEqual(keys_a.key_check, keys_b.key_check)
        self.assertFalse(self.alice.pending(BOB_GUID))

    def test_handshake_rejects_foreign_anchor(self):
        intruder = self.endpoint("eve", ALICE_GUID, anchor=create_trust_anchor())
        with self.assertRaises(HandshakeError):
            handshake(intruder, self.bob, now=100.0)

    def test_handshake_rejects_misaddressed_request(self):
        request = self.alice.initiate(bytes([3] * 12) + bytes(4))
        with self.assertRaises(HandshakeError):
            self.bob.respond(request, 100.0)

    def test_superseded_handshake_reply_rejected(self):
        old_request = self.alice.initiate(BOB_GUID)
        reply, _, _ = self.bob.respond(old_request, 100.0)
        self.alice.initiate(BOB_GUID)
        with self.assertRaises(HandshakeError):
            self.alice.complete(reply, 100.0)

    def test_seal_and_open(self):
        keys_a, keys_b = handshake(self.alice, self.bob, now=100.0)
        sender, receiver = PairSession(keys_a), PairSession(keys_b)
        plain = self.datagram(b"top secret")
        sealed = sender.seal_datagram(plain)
        self.assertTrue(decode_header(sealed).encrypted)
        self.assertNotIn(b"top secret", sealed)
        self.assertEqual(receiver.open_datagram(sealed), plain)

    def test_replay_and_tamper(self):
        keys_a, keys_b = handshake(self.alice, self.bob, now=100.0)
        sender, receiver = PairSession(keys_a), PairSession(keys_b)
        sealed = sender.seal_datagram(self.datagram())
        receiver.open_datagram(sealed)
        with self.assertRaises(ReplayError):
            receiver.open_datagram(sealed)
        tampered = bytearray(sender.seal_datagram(self.datagram(seq=2)))
        tampered[-1] ^= 0x01
        with self.assertRaises(AuthenticationError):
            receiver.open_datagram(bytes(tampered))
        header_tampered = bytearray(sender.seal_datagram(self.datagram(seq=3)))
        header_tampered[24] ^= 0x01  # inside topic_id
        with self.assertRaises(AuthenticationError):
            receiver.open_datagram(bytes(header_tampered))
        with self.assertRaises(AuthenticationError):
            receiver.open_datagram(self.datagram())

    def test_counter_exhaustion_requires_rekey(self):
        keys_a, _ = handshake(self.alice, self.bob, now=100.0)
        session = PairSession(keys_a, max_counter=2)
        session.seal_datagram(self.datagram())
        session.seal_datagram(self.datagram())
        with self.assertRaises(RekeyRequiredError):
            session.seal_datagram(self.datagram())

    def test_replay_window(self):
        window = ReplayWindow(size=64)
        for counter in (1, 3, 2, 100):
            self.assertTrue(window.check(counter))
            window.accept(counter)
        self.assertFalse(window.check(100))
        self.assertFalse(window.check(3))
        self.assertFalse(window.check(36))   # 64 behind the highest
        self.assertTrue(window.check(37))
        self.assertTrue(window.check(101))


class TestSecuredDomain(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.anchor = create_trust_anchor()

    def tearDown(self):
        self.domain.close()

    def secured(self, subject, rules, anchor=None):
        issuer = anchor or self.anchor
        identity = generate_identity(issuer, subject, now=0.0)
        permissions = create_permissions(issuer, subject, INFRASTRUCTURE_RULES + rules)
        return SecurityContext(identity, issuer.public_key, permissions)

    def talker_listener(self):
        alice = self.domain.context(security=self.secured("alice", ["PUB:/secret/*"]))
        bob = self.domain.context(security=self.secured("bob", ["SUB:/secret/*"]))
        received = []
        publisher = alice.create_node("talker").create_publisher("/secret/data", builtin.STRING)
        subscription = bob.create_node("listener").create_subscription(
            "/secret/data", builtin.STRING, lambda msg: received.append(msg.data))
        return alice, bob, publisher, subscription, received

    def test_secured_pair_exchanges_encrypted_data(self):
        captured = []
        self.domain.network.add_tap(lambda source, destination, datagram: captured.append(datagram))
        alice, bob, publisher, subscription, received = self.talker_listener()
        self.assertTrue(self.domain.spin_until(
            lambda: publisher.matched_count == 1 and subscription.matched_count == 1, 6.0))
        for i in range(5):
            publisher.publish({"data": f"top secret {i}"})
        self.assertTrue(self.domain.spin_until(lambda: len(received) == 5, 2.0))

        data = [d for d in captured if decode_header(d).kind == PacketKind.DATA]
        self.assertGreaterEqual(len(data), 5)
        for datagram in data:
            self.assertTrue(decode_header(datagram).encrypted)
            self.assertNotIn(b"top secret", datagram)

    def test_local_permissions_enforced(self):
        alice = self.domain.context(security=self.secured("alice", ["PUB:/secret/*"]))
        node = alice.create_node("talker")
        with self.assertRaises(AccessDeniedError):
            node.create_subscription("/secret/data", builtin.STRING, lambda msg: None)
        with self.assertRaises(AccessDeniedError):
            node.create_publisher("/cmd_vel", builtin.STRING)

    def test_replayed_and_tampered_packets_rejected(self):
        captured = []
        self.domain.network.add_tap(lambda source, destination, datagram: captured.append((destination, datagram)))
        alice, bob, publisher, subscription, received = self.talker_listener()
        self.domain.spin_until(lambda: publisher.matched_count == 1 and subscription.matched_count == 1, 6.0)
        for i in range(5):
            publisher.publish({"data": f"reading {i}"})
        self.domain.spin_until(lambda: len(received) == 5, 2.0)

        replays_before = bob.diagnostics.count("replays_rejected")
        failures_before = bob.diagnostics.count("auth_failures")
        bob_address = bob.participant.transport.local_address
        replays = [d for dest, d in captured if dest == bob_address and decode_header(d).kind == PacketKind.DATA]
        self.assertEqual(len(replays), 5)
        for datagram in replays:
            self.domain.network.inject(bob_address, datagram)
        tampered = bytearray(replays[-1])
        tampered[-1] ^= 0xFF
        self.domain.network.inject(bob_address, bytes(tampered))
        self.domain.spin(0.5)

        self.assertEqual(len(received), 5)
        self.assertEqual(bob.diagnostics.count("replays_rejected"), replays_before + 5)
        self.assertEqual(bob.diagnostics.count("auth_failures"), failures_before + 1)
        self.assertEqual(bob.diagnostics.severity, "critical")
        self.assertTrue(any("Replay" in err["message"] for err in bob.diagnostics.errors))
        self.assertTrue(any("Unauthenticated" in w["message"] for w in bob.diagnostics.warnings))

    def test_participant_with_foreign_certificate_never_matches(self):
        alice, bob, publisher, subscription, received = self.talker_listener()
        eve = self.domain.context(
            security=self.secured("eve", ["SUB:/secret/*"], anchor=create_trust_anchor("rogue")))
        overheard = []
        eve.create_node("eavesdropper").create_subscription(
            "/secret/data", builtin.STRING, lambda msg: overheard.append(msg.data))
        self.domain.spin_until(lambda: subscription.matched_count == 1, 6.0)
        for i in range(5):
            publisher.publish({"data": f"reading {i}"})
        self.domain.spin(2.0)
        self.assertEqual(len(received), 5)
        self.assertEqual(overheard, [])
        self.assertEqual(publisher.matched_count, 1)
        self.assertGreater(alice.diagnostics.count("auth_failures"), 0)
        self.assertGreater(eve.diagnostics.count("auth_failures"), 0)
        self.assertTrue(any("Rejected announcement" in err["message"] for err in eve.diagnostics.errors))

    def test_non_enforcing_peer_cannot_deliver(self):
        rogue_security = self.secured("mallory", ["SUB:/other"])
        rogue_security.check_local = lambda direction, topic: None
        mallory = self.domain.context(security=rogue_security)
        bob = self.domain.context(security=self.secured("bob", ["SUB:/secret/*"]))
        received = []
        publisher = mallory.create_node("spoofer").create_publisher("/secret/data", builtin.STRING)
        subscription = bob.create_node("listener").create_subscription(
            "/secret/data", builtin.STRING, lambda msg: received.append(msg.data))
        self.domain.spin(4.0)
        for i in range(10):
            publisher.publish({"data": "forged"})
        self.domain.spin(1.0)
        self.assertEqual(subscription.matched_count, 0)
        self.assertEqual(received, [])

    def test_unsecured_peer_is_a_downgrade(self):
        alice = self.domain.context(security=self.secured("alice", ["PUB:/secret/*"]))
        plain = self.domain.context()
        received = []
        publisher = alice.create_node("talker").create_publisher("/secret/data", builtin.STRING)
        plain.create_node("listener").create_subscription(
            "/secret/data", builtin.STRING, lambda msg: received.append(msg.data))
        self.domain.spin(3.0)
        publisher.publish({"data": "top secret"})
        self.domain.spin(0.5)
        self.assertEqual(publisher.matched_count, 0)
        self.assertEqual(received, [])
        self.assertGreater(alice.diagnostics.count("downgrade_rejected"), 0)
        self.assertGreater(plain.diagnostics.count("downgrade_rejected"), 0)
        self.assertEqual(alice.diagnostics.severity, "critical")
        downgrades = [err for err in alice.diagnostics.errors if "downgrade" in err["message"]]
        self.assertEqual(len(downgrades), 1)
        self.assertEqual(plain.diagnostics.severity, "success")
        self.assertTrue(any("security is off" in w["message"] or "security off" in w["message"]
                            for w in plain.diagnostics.warnings))


if __name__ == "__main__":
    unittest.main()
