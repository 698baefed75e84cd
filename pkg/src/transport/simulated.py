import logging
import threading
from collections import deque
from typing import Callable, Optional

from src.shared.clock import SystemClock
from src.transport.base import DatagramTransport

logger = logging.getLogger(__name__)


class SimulatedNetwork:
    """In-memory datagram fabric.

    Every attached transport gets a ("sim", n) address; discovery datagrams
    reach all attached transports, the sender included, like a multicast
    group with loopback. Taps observe every datagram (source, destination,
    bytes) for capture tests.
    """

    def __init__(self, clock=None):
        self.clock = clock or SystemClock()
        self._transports: dict = {}
        self._next_port = 1
        self._lock = threading.Lock()
        self.taps: list = []
        self.delivered = 0

    def attach(self) -> "SimulatedTransport":
        with self._lock:
            address = ("sim", self._next_port)
            self._next_port += 1
            transport = SimulatedTransport(self, address)
            self._transports[address] = transport
        logger.debug(f"Attached simulated transport {address}")
        return transport

    def detach(self, address: tuple) -> None:
        with self._lock:
            self._transports.pop(address, None)

    def add_tap(self, tap: Callable) -> None:
        self.taps.append(tap)

    def deliver(self, source: tuple, destination: tuple, datagram: bytes) -> None:
        for tap in self.taps:
            tap(source, destination, datagram)
        with self._lock:
            target = self._transports.get(destination)
        if target is None:
            return
        target._enqueue(datagram, source)
        self.delivered += 1

    def broadcast(self, source: tuple, datagram: bytes) -> None:
        with self._lock:
            targets = list(self._transports)
        for destination in targets:
            self.deliver(source, destination, datagram)

    def inject(self, destination: tuple, datagram: bytes, source: tuple = ("sim", 0)) -> None:
        """Deliver a hand-made datagram, bypassing any sender."""
        self.deliver(source, destination, datagram)

    @property
    def addresses(self) -> list:
        with self._lock:
            return list(self._transports)


class SimulatedTransport(DatagramTransport):
    def __init__(self, network: SimulatedNetwork, address: tuple):
        self.network = network
        self.local_address = address
        self._inbox = deque()
        self._ready = threading.Condition()
        self._closed = False

    def _enqueue(self, datagram: bytes, source: tuple) -> None:
        with self._ready:
            self._inbox.append((bytes(datagram), source))
            self._ready.notify()

    def send(self, datagram: bytes, address: tuple) -> None:
        if not self._closed:
            self.network.deliver(self.local_address, address, datagram)

    def send_discovery(self, datagram: bytes) -> None:
        if not self._closed:
            self.network.broadcast(self.local_address, datagram)

    def receive(self, timeout: float = 0.0) -> list:
        with self._ready:
            if not self._inbox and timeout > 0 and not self.network.clock.virtual and not self._closed:
                self._ready.wait(timeout)
            items = list(self._inbox)
            self._inbox.clear()
        return items

    def close(self) -> None:
        self._closed = True
        self.network.detach(self.local_address)
        with self._ready:
            self._ready.notify_all()


def make_simulated_pair(clock=None, network: Optional[SimulatedNetwork] = None):
    network = network or SimulatedNetwork(clock)
    return network, network.attach(), network.attach()
