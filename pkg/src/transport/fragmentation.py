import logging
from dataclasses import dataclass, field

from src.shared.config import FRAGMENT_SIZE, REASSEMBLY_TIMEOUT

logger = logging.getLogger(__name__)


def fragment(payload: bytes, max_fragment: int = FRAGMENT_SIZE) -> list:
    """Split into ceil(len/max_fragment) pieces; an empty payload is one empty piece."""
    if max_fragment <= 0:
        raise ValueError("max_fragment must be positive")
    if len(payload) >= 2**32:
        raise ValueError("Payload too large")
    if not payload:
        return [b""]
    view = memoryview(payload)
    return [bytes(view[i:i + max_fragment]) for i in range(0, len(payload), max_fragment)]


@dataclass
class _Partial:
    frag_count: int
    started: float
    pieces: dict = field(default_factory=dict)


class Reassembler:
    """Collects fragments per (writer_guid, seq) until complete.

    Duplicate fragments are ignored; partial messages older than `timeout`
    are discarded by `expire`.
    """

    def __init__(self, timeout: float = REASSEMBLY_TIMEOUT):
        self.timeout = timeout
        self._partials: dict = {}
        self.expired_count = 0

    def add(self, key, frag_index: int, frag_count: int, data: bytes, now: float):
        """Returns the full payload once every fragment of `key` has arrived."""
        if frag_count == 1:
            return data
        partial = self._partials.get(key)
        if partial is None:
            partial = _Partial(frag_count=frag_count, started=now)
            self._partials[key] = partial
        elif partial.frag_count != frag_count:
            logger.debug(f"Fragment count changed for {key}, restarting reassembly")
            partial = _Partial(frag_count=frag_count, started=now)
            self._partials[key] = partial
        if frag_index in partial.pieces:
            return None
        partial.pieces[frag_index] = data
        if len(partial.pieces) < partial.frag_count:
            return None
        del self._partials[key]
        return b"".join(partial.pieces[i] for i in range(partial.frag_count))

    def discard(self, key) -> None:
        self._partials.pop(key, None)

    def discard_below(self, writer_guid: bytes, seq: int) -> None:
        for key in [k for k in self._partials if k[0] == writer_guid and k[1] < seq]:
            del self._partials[key]

    def expire(self, now: float) -> int:
        stale = [k for k, p in self._partials.items() if now - p.started > self.timeout]
        for key in stale:
            del self._partials[key]
        if stale:
            self.expired_count += len(stale)
            logger.debug(f"Discarded {len(stale)} partial messages after {self.timeout}s")
        return len(stale)

    def __len__(self):
        return len(self._partials)
