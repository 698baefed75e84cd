import os
import tempfile
import unittest
from unittest.mock import patch

from src.shared.config import DEFAULTS, discovery_port, load_config, static_peer_list


class TestLoadConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "minibus.env")

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        with open(self.path, "w") as f:
            f.write(text)

    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_config()
        self.assertEqual(config, DEFAULTS)

    def test_precedence(self):
        self.write("MINIBUS_DOMAIN_ID=3\nlease_duration=9\nsecurity=yes\n")
        with patch.dict(os.environ, {"MINIBUS_DOMAIN_ID": "5"}, clear=True):
            config = load_config(self.path, {"lease_duration": 4.5})
        self.assertEqual(config["domain_id"], 5)
        self.assertEqual(config["lease_duration"], 4.5)
        self.assertIs(config["security"], True)

    def test_unknown_keys(self):
        self.write("colour=blue\n")
        with patch.dict(os.environ, {}, clear=True):
            with self.assertLogs("src.shared.config", level="WARNING"):
                load_config(self.path)
            with self.assertRaises(ValueError):
                load_config(overrides={"colour": "blue"})

    def test_bad_boolean(self):
        with patch.dict(os.environ, {"MINIBUS_SECURITY": "maybe"}, clear=True):
            with self.assertRaises(ValueError):
                load_config()

    def test_signature_scheme(self):
        with patch.dict(os.environ, {"MINIBUS_SIGNATURE_SCHEME": "ecdsa-p384"}, clear=True):
            self.assertEqual(load_config()["signature_scheme"], "ecdsa-p384")
        with patch.dict(os.environ, {}, clear=True):
            with self.assertRaises(ValueError) as ctx:
                load_config(overrides={"signature_scheme": "ed25519"})
            self.assertIn("signature_scheme", str(ctx.exception))
            with self.assertRaises(ValueError):
                load_config(overrides={"agreement_scheme": "x25519"})

    def test_derived_values(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_config(overrides={"domain_id": 2, "static_peers": "10.0.0.2:7400, robot.local:7650"})
        self.assertEqual(discovery_port(config), config["discovery_base_port"] + 500)
        self.assertEqual(static_peer_list(config), [("10.0.0.2", 7400), ("robot.local", 7650)])
        with self.assertRaises(ValueError):
            static_peer_list({"static_peers": "nohost"})


if __name__ == "__main__":
    unittest.main()
