import logging
from abc import ABC, abstractmethod
from typing import Optional

from src.shared.errors import MiddlewareError

logger = logging.getLogger(__name__)

# Virtual clocks advance in steps no longer than this while waiting
VIRTUAL_STEP = 0.005
# Longest single blocking receive on a real clock
REAL_SLICE = 0.01
SPIN_SLICE = 0.1


class Executor(ABC):
    """Scheduling seam between nodes and the threads that run them.

    Node code only creates waitables; any executor that collects their
    work items and runs each exactly once can drive it.
    """

    def __init__(self, contexts=(), fail_fast: Optional[bool] = None):
        self.contexts: list = []
        self.fail_fast = fail_fast
        self.callback_errors = 0
        self.executed = 0
        self._shutdown = False
        for context in contexts:
            self.add_context(context)

    def add_context(self, context) -> None:
        if context not in self.contexts:
            self.contexts.append(context)
        if self.fail_fast is None:
            self.fail_fast = bool(context.config.get("fail_fast", False))

    def remove_context(self, context) -> None:
        if context in self.contexts:
            self.contexts.remove(context)

    @property
    def clock(self):
        if not self.contexts:
            raise MiddlewareError("Executor has no context")
        return self.contexts[0].clock

    @abstractmethod
    def spin_once(self, max_wait: float = 0.0) -> int:
        """Run the work that is ready (waiting up to `max_wait` seconds for
        some) and return the number of callbacks executed."""

    def spin(self, timeout: Optional[float] = None) -> int:
        """Spin until shutdown, or for `timeout` seconds of clock time."""
        deadline = None if timeout is None else self.clock.now() + timeout
        total = 0
        while not self._shutdown and self.contexts:
            if deadline is not None:
                remaining = deadline - self.clock.now()
                if remaining <= 0:
                    break
                total += self.spin_once(min(SPIN_SLICE, remaining))
            else:
                total += self.spin_once(SPIN_SLICE)
        return total

    def spin_until_future_complete(self, future, timeout: Optional[float] = None) -> bool:
        """Spin until `future` is done. Returns False on timeout."""
        deadline = None if timeout is None else self.clock.now() + timeout
        while not future.done():
            if self._shutdown:
                return False
            if deadline is not None:
                remaining = deadline - self.clock.now()
                if remaining <= 0:
                    return future.done()
                self.spin_once(min(SPIN_SLICE, remaining))
            else:
                self.spin_once(SPIN_SLICE)
        return True

    def spin_until(self, predicate, timeout: float) -> bool:
        deadline = self.clock.now() + timeout
        while not predicate():
            remaining = deadline - self.clock.now()
            if remaining <= 0 or self._shutdown:
                return bool(predicate())
            self.spin_once(min(SPIN_SLICE, remaining))
        return True

    def shutdown(self) -> None:
        self._shutdown = True


class SingleThreadedExecutor(Executor):
    """Reference executor: one thread, callbacks never overlap."""

    def __init__(self, contexts=(), fail_fast: Optional[bool] = None):
        super().__init__(contexts, fail_fast)
        self._spinning = False

    def _live_contexts(self) -> list:
        return [c for c in self.contexts if c.ok]

    def _waitables(self) -> list:
        out = []
        for context in self._live_contexts():
            out.extend(context.waitables())
        return out

    def _poll(self, timeout: float) -> list:
        contexts = self._live_contexts()
        for i, context in enumerate(contexts):
            context.participant.tick(timeout if i == 0 else 0.0)
        now = self.clock.now()
        work = []
        for waitable in self._waitables():
            work.extend(waitable.collect(now))
        return work

    def _next_ready(self) -> Optional[float]:
        times = [t for t in (w.next_ready_time() for w in self._waitables()) if t is not None]
        return min(times) if times else None

    def _wait(self, max_wait: float) -> list:
        clock = self.clock
        deadline = clock.now() + max_wait
        while True:
            now = clock.now()
            remaining = deadline - now
            if remaining <= 0:
                return []
            next_ready = self._next_ready()
            step = remaining if next_ready is None else min(remaining, max(next_ready - now, 0.0))
            if clock.virtual:
                clock.advance(min(max(step, 1e-6), VIRTUAL_STEP, remaining))
                work = self._poll(0.0)
            else:
                work = self._poll(min(max(step, 0.001), REAL_SLICE, remaining))
            if work:
                return work

    def spin_once(self, max_wait: float = 0.0) -> int:
        if self._spinning:
            raise RuntimeError("spin_once called from inside a callback")
        if not self._live_contexts():
            return 0
        self._spinning = True
        try:
            work = self._poll(0.0)
            if not work and max_wait > 0:
                work = self._wait(max_wait)
            return self._execute(work)
        finally:
            self._spinning = False

    def _execute(self, work: list) -> int:
        count = 0
        for item in work:
            try:
                item.execute()
            except Exception as e:
                self.callback_errors += 1
                label = item.label or item.kind.value
                logger.exception(f"Callback {label} failed: {e}")
                owner = getattr(item.target, "participant", None)
                if owner is not None:
                    owner.diagnostics.increment("callback_errors")
                    owner.diagnostics.add_error("executor", f"Callback {label} failed: {e}",
                                                impact="callback skipped", quiet=True)
                if self.fail_fast:
                    raise
            count += 1
        self.executed += count
        return count


def spin_once(executor: Executor, max_wait: float = 0.0) -> int:
    return executor.spin_once(max_wait)


def spin(executor: Executor, timeout: Optional[float] = None) -> int:
    return executor.spin(timeout)
