import logging
import os
from typing import Optional

from dotenv import load_dotenv, dotenv_values

load_dotenv()

logger = logging.getLogger(__name__)

ENV_PREFIX = "MINIBUS_"

# Domain scoping: domain_id is mixed into the discovery port
DOMAIN_ID = int(os.getenv("MINIBUS_DOMAIN_ID", "0"))
DISCOVERY_BASE_PORT = int(os.getenv("MINIBUS_DISCOVERY_BASE_PORT", "7400"))
DOMAIN_PORT_GAIN = 250
MULTICAST_GROUP = os.getenv("MINIBUS_MULTICAST_GROUP", "239.255.0.1")

# Discovery timing (seconds)
ANNOUNCE_PERIOD = 1.0
LEASE_DURATION = 3.0

# Transport
FRAGMENT_SIZE = 1200
REASSEMBLY_TIMEOUT = 2.0
HEARTBEAT_PERIOD = 0.1
KEEP_ALL_HIGH_WATER = 64 * 1024 * 1024
SOCKET_BUFFER_SIZE = 1024 * 1024

# RPC
SERVICE_TIMEOUT = 5.0

# Benchmarks: message-size axis of the latency experiment
PERF_DEFAULT_SIZES = [
    1024, 4 * 1024, 16 * 1024, 32 * 1024, 60 * 1024,
    512 * 1024, 1024 * 1024, 2 * 1024 * 1024, 4 * 1024 * 1024, 8 * 1024 * 1024,
]
PERF_SIZE_LABELS = {
    1024: "1k", 4 * 1024: "4k", 16 * 1024: "16k", 32 * 1024: "32k",
    60 * 1024: "60k", 512 * 1024: "512k", 1024 * 1024: "1m",
    2 * 1024 * 1024: "2m", 4 * 1024 * 1024: "4m", 8 * 1024 * 1024: "8m",
}
PERF_DEFAULT_RATE = 1000
PERF_DEFAULT_DURATION = 5.0

# Loss experiment: 1000-byte arrays at ~29 Hz for 15 s through a 54 Mbps link
LOSS_DEFAULTS = {
    "loss_percents": [0, 10, 20],
    "bandwidth_bps": 54_000_000,
    "message_size": 1000,
    "send_rate": 29.0,
    "duration": 15.0,
    "grace": 2.0,
}

DEFAULTS = {
    "domain_id": DOMAIN_ID,
    "intra_process": True,
    "security": False,
    "keystore": "./keystore",
    "identity": "",
    "multicast_group": MULTICAST_GROUP,
    "discovery_base_port": DISCOVERY_BASE_PORT,
    "static_peers": "",
    "unicast_host": "",
    "unicast_port": 0,
    "announce_period": ANNOUNCE_PERIOD,
    "lease_duration": LEASE_DURATION,
    "socket_buffer_size": SOCKET_BUFFER_SIZE,
    "fragment_size": FRAGMENT_SIZE,
    "reassembly_timeout": REASSEMBLY_TIMEOUT,
    "heartbeat_period": HEARTBEAT_PERIOD,
    "keep_all_high_water": KEEP_ALL_HIGH_WATER,
    "service_timeout": SERVICE_TIMEOUT,
    "fail_fast": False,
    "impair_drop": 0.0,
    "impair_bandwidth_bps": 0,
    "impair_latency": 0.0,
    "impair_seed": 0,
    "signature_scheme": "ecdsa-p256",
    "agreement_scheme": "ecdh-p256",
}

# Accepted values for the keys naming cryptographic schemes
SCHEME_CHOICES = {
    "signature_scheme": ("ecdsa-p256", "ecdsa-p384"),
    "agreement_scheme": ("ecdh-p256",),
}

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off", ""}


def _coerce(key: str, raw, default):
    """Convert a raw string to the type of the default value."""
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        word = raw.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        raise ValueError(f"Config key {key}: expected boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw.strip())
    if isinstance(default, float):
        return float(raw.strip())
    return raw.strip()


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Build the effective configuration.

    Precedence (lowest first): DEFAULTS, key=value file at `path`,
    MINIBUS_<KEY> environment variables, explicit `overrides`.
    """
    config = dict(DEFAULTS)

    if path:
        file_values = dotenv_values(path)
        for raw_key, raw_value in file_values.items():
            key = raw_key.strip().lower()
            if key.startswith(ENV_PREFIX.lower()):
                key = key[len(ENV_PREFIX):]
            if key not in DEFAULTS:
                logger.warning(f"Ignoring unknown config key '{raw_key}' in {path}")
                continue
            config[key] = _coerce(key, raw_value, DEFAULTS[key])

    for key, default in DEFAULTS.items():
        env_value = os.getenv(f"{ENV_PREFIX}{key.upper()}")
        if env_value is not None:
            config[key] = _coerce(key, env_value, default)

    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ValueError(f"Unknown config key: {key}")
        config[key] = _coerce(key, value, DEFAULTS[key])

    for key, choices in SCHEME_CHOICES.items():
        if config[key] not in choices:
            raise ValueError(f"Config key {key}: unsupported value {config[key]!r}, expected one of {choices}")

    return config


def discovery_port(config: dict) -> int:
    """Discovery port for the configured domain."""
    return config["discovery_base_port"] + DOMAIN_PORT_GAIN * config["domain_id"]


def static_peer_list(config: dict) -> list:
    """Parse `static_peers` ("host:port,host:port") into address tuples."""
    peers = []
    for item in (config.get("static_peers") or "").split(","):
        item = item.strip()
        if not item:
            continue
        host, _, port = item.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"Bad static peer entry: {item!r}")
        peers.append((host, int(port)))
    return peers
