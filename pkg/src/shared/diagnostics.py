import logging
import time
from collections import Counter, deque

logger = logging.getLogger(__name__)


class Diagnostics:
    """Track errors, warnings, and event counters for one participant or tool run.

    Usage:
        diag = Diagnostics("participant-3fa2")
        diag.increment("auth_failures")
        diag.add_warning("Rejected unsigned announcement", service="discovery")
        diag.finalize()
    """

    CRITICAL_KEYWORDS = ["replay", "downgrade", "rekey", "all failed"]
    MAX_RECORDS = 256

    def __init__(self, component: str):
        self.component = component
        self.errors: deque = deque(maxlen=self.MAX_RECORDS)
        self.warnings: deque = deque(maxlen=self.MAX_RECORDS)
        self.error_total = 0
        self._critical = False
        self.counters: Counter = Counter()
        self.start_time = time.time()

    def add_error(self, service: str, message: str, impact: str = "", quiet: bool = False) -> None:
        """Record an error that was contained.

        Pass quiet=True when the caller has already logged the failure itself.
        """
        self.errors.append({"service": service, "message": message, "impact": impact})
        self.error_total += 1
        if any(kw in message.lower() for kw in self.CRITICAL_KEYWORDS):
            self._critical = True
        if not quiet:
            logger.error(f"[{self.component}] {service}: {message}")

    def add_warning(self, message: str, service: str = "", quiet: bool = False) -> None:
        """Record a warning (rejected input or degraded operation)."""
        self.warnings.append({"service": service, "message": message})
        if not quiet:
            logger.warning(f"[{self.component}] {message}")

    def increment(self, name: str, n: int = 1) -> None:
        self.counters[name] += n

    def count(self, name: str) -> int:
        return self.counters.get(name, 0)

    @property
    def severity(self) -> str:
        if not self.error_total:
            return "success"
        if self._critical or self.error_total >= 3:
            return "critical"
        return "warning"

    def finalize(self) -> None:
        """Log a one-line summary of the run."""
        duration = time.time() - self.start_time
        nonzero = {k: v for k, v in sorted(self.counters.items()) if v}
        if self.severity == "success":
            logger.info(
                f"[{self.component}] Completed in {duration:.1f}s, counters={nonzero}"
            )
        else:
            logger.warning(
                f"[{self.component}] Finished with {self.error_total} errors, "
                f"{len(self.warnings)} warnings in {duration:.1f}s "
                f"(severity={self.severity}), counters={nonzero}"
            )
