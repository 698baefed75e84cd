import threading
import time


class SystemClock:
    """Wall-clock seconds shared by every process on the host."""

    virtual = False

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Manually advanced clock for deterministic simulations.

    `sleep` advances time instead of blocking, so an executor spinning on a
    virtual clock never waits on the host.
    """

    virtual = True

    def __init__(self, start: float = 1_000.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("Cannot move a clock backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)
