import heapq
import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.shared.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImpairmentConfig:
    """Lossy, rate-limited, delayed link. `bandwidth_cap` is bits/second,
    None means unlimited."""

    drop_probability: float = 0.0
    bandwidth_cap: Optional[float] = None
    added_latency: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValidationError(f"drop_probability must be in [0, 1], got {self.drop_probability}")
        if self.bandwidth_cap is not None and self.bandwidth_cap <= 0:
            raise ValidationError(f"bandwidth_cap must be > 0, got {self.bandwidth_cap}")
        if self.added_latency < 0:
            raise ValidationError(f"added_latency must be >= 0, got {self.added_latency}")

    @property
    def is_noop(self) -> bool:
        return self.drop_probability == 0.0 and self.bandwidth_cap is None and self.added_latency == 0.0

    @classmethod
    def from_config(cls, config: dict) -> "ImpairmentConfig":
        cap = config.get("impair_bandwidth_bps") or None
        return cls(
            drop_probability=float(config.get("impair_drop", 0.0)),
            bandwidth_cap=float(cap) if cap else None,
            added_latency=float(config.get("impair_latency", 0.0)),
            rng_seed=int(config.get("impair_seed", 0)),
        )


@dataclass(frozen=True)
class Deliver:
    at: float
    queuing_delay: float = 0.0


class _Drop:
    def __repr__(self):
        return "DROP"


DROP = _Drop()


class Impairment:
    """Per-link impairment decisions.

    One uniform draw per datagram in arrival order decides the drop, so the
    same seed and traffic always drop the same datagrams. Surviving
    datagrams serialize onto a link of `bandwidth_cap` bits/s (one packet
    in flight, FIFO) and then wait `added_latency`.
    """

    def __init__(self, config: ImpairmentConfig):
        self.config = config
        self._rng = np.random.default_rng(config.rng_seed)
        self._link_free_at = float("-inf")
        self.offered = 0
        self.dropped = 0

    def impair(self, datagram: bytes, now: float) -> Union[Deliver, _Drop]:
        self.offered += 1
        if self._rng.random() < self.config.drop_probability:
            self.dropped += 1
            return DROP
        if self.config.bandwidth_cap is None:
            return Deliver(at=now + self.config.added_latency)
        start = max(now, self._link_free_at)
        self._link_free_at = start + len(datagram) * 8 / self.config.bandwidth_cap
        return Deliver(at=self._link_free_at + self.config.added_latency, queuing_delay=start - now)


def impair(impairment: Impairment, datagram: bytes, now: float) -> Union[Deliver, _Drop]:
    return impairment.impair(datagram, now)


class DelayLine:
    """Holds datagrams until their delivery time."""

    def __init__(self):
        self._heap = []
        self._order = itertools.count()

    def push(self, at: float, item) -> None:
        heapq.heappush(self._heap, (at, next(self._order), item))

    def pop_due(self, now: float) -> list:
        due = []
        while self._heap and self._heap[0][0] <= now:
            due.append(heapq.heappop(self._heap)[2])
        return due

    def next_due(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def __len__(self):
        return len(self._heap)
