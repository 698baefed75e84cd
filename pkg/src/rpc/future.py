import logging
from typing import Callable, Optional

logger = logging.getLogger(__name__)

_PENDING = object()


class Future:
    """Completion slot filled on the executor thread.

    Nothing here blocks; callers spin an executor until `done()`.
    """

    def __init__(self):
        self._result = _PENDING
        self._exception: Optional[BaseException] = None
        self._callbacks: list = []
        self.cancelled = False

    def done(self) -> bool:
        return self._result is not _PENDING or self._exception is not None or self.cancelled

    def result(self):
        """The value, or raise the stored error. None while pending."""
        if self._exception is not None:
            raise self._exception
        return None if self._result is _PENDING else self._result

    def exception(self) -> Optional[BaseException]:
        return self._exception

    def set_result(self, value) -> None:
        if self.done():
            logger.debug("Ignoring result for a future that is already done")
            return
        self._result = value
        self._run_callbacks()

    def set_exception(self, error: BaseException) -> None:
        if self.done():
            logger.debug("Ignoring error for a future that is already done")
            return
        self._exception = error
        self._run_callbacks()

    def cancel(self) -> None:
        if not self.done():
            self.cancelled = True
            self._run_callbacks()

    def add_done_callback(self, callback: Callable[["Future"], None]) -> None:
        if self.done():
            callback(self)
        else:
            self._callbacks.append(callback)

    def _run_callbacks(self) -> None:
        callbacks, self._callbacks = self._callbacks, []
        for callback in callbacks:
            callback(self)
