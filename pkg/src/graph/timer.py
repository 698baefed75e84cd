import logging
from typing import Callable, Optional

from src.graph.events import ExecutorWorkItem, Waitable, WorkKind
from src.shared.errors import ValidationError

logger = logging.getLogger(__name__)


class Timer(Waitable):
    """Periodic callback. Fires at most once per collect; missed periods
    are skipped rather than replayed."""

    def __init__(self, period: float, callback: Callable[[], None], clock, gate: Optional[Callable[[], bool]] = None):
        if period <= 0:
            raise ValidationError(f"Timer period must be > 0, got {period}")
        self.period = period
        self.callback = callback
        self.clock = clock
        self.gate = gate
        self.next_fire = clock.now() + period
        self.canceled = False
        self.fire_count = 0

    def cancel(self) -> None:
        self.canceled = True

    def reset(self) -> None:
        self.canceled = False
        self.next_fire = self.clock.now() + self.period

    def next_ready_time(self) -> Optional[float]:
        return None if self.canceled else self.next_fire

    def collect(self, now: float) -> list:
        if self.canceled or now < self.next_fire:
            return []
        while self.next_fire <= now:
            self.next_fire += self.period
        if self.gate is not None and not self.gate():
            return []
        return [ExecutorWorkItem(WorkKind.TIMER, self, now, self._fire, label="timer")]

    def _fire(self) -> None:
        self.fire_count += 1
        self.callback()
