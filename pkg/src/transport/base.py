import logging
from abc import ABC, abstractmethod
from typing import Optional

from src.transport.impairment import DROP, DelayLine, Impairment, ImpairmentConfig

logger = logging.getLogger(__name__)


class DatagramTransport(ABC):
    """Unreliable datagram service shared by the real and simulated paths.

    `send_discovery` reaches every participant on the discovery channel
    (multicast group or simulated broadcast). `receive` returns a list of
    (datagram, source_address) pairs, waiting up to `timeout` seconds for
    the first one.
    """

    local_address: tuple

    @abstractmethod
    def send(self, datagram: bytes, address: tuple) -> None:
        ...

    @abstractmethod
    def send_discovery(self, datagram: bytes) -> None:
        ...

    @abstractmethod
    def receive(self, timeout: float = 0.0) -> list:
        ...

    def close(self) -> None:
        pass


class ImpairedTransport(DatagramTransport):
    """Wraps a transport so every outgoing datagram passes the impairment
    layer before reaching the wire."""

    def __init__(self, inner: DatagramTransport, config: ImpairmentConfig, clock):
        self.inner = inner
        self.impairment = Impairment(config)
        self.clock = clock
        self._delayed = DelayLine()
        self.diagnostics = None

    @property
    def local_address(self) -> tuple:
        return self.inner.local_address

    def _submit(self, datagram: bytes, address: Optional[tuple]) -> None:
        now = self.clock.now()
        decision = self.impairment.impair(datagram, now)
        if decision is DROP:
            if self.diagnostics is not None:
                self.diagnostics.increment("impair_dropped")
            return
        if decision.at <= now:
            self._emit(datagram, address)
        else:
            self._delayed.push(decision.at, (datagram, address))

    def _emit(self, datagram: bytes, address: Optional[tuple]) -> None:
        if address is None:
            self.inner.send_discovery(datagram)
        else:
            self.inner.send(datagram, address)

    def flush(self) -> int:
        """Emit every delayed datagram whose delivery time has passed."""
        due = self._delayed.pop_due(self.clock.now())
        for datagram, address in due:
            self._emit(datagram, address)
        return len(due)

    def send(self, datagram: bytes, address: tuple) -> None:
        self.flush()
        self._submit(datagram, address)

    def send_discovery(self, datagram: bytes) -> None:
        self.flush()
        self._submit(datagram, None)

    def receive(self, timeout: float = 0.0) -> list:
        self.flush()
        next_due = self._delayed.next_due()
        if next_due is not None and not self.clock.virtual:
            timeout = min(timeout, max(0.0, next_due - self.clock.now()))
        return self.inner.receive(timeout)

    @property
    def pending(self) -> int:
        return len(self._delayed)

    def close(self) -> None:
        self.inner.close()
