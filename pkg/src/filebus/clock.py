"""Injectable clocks. Every timestamp in the runtime comes from one of these."""

from __future__ import annotations

import threading
import time
from datetime import datetime, timezone


class WallClock:
    def now(self) -> float:
        return time.time()

    def monotonic(self) -> float:
        return time.monotonic()

    def iso(self) -> str:
        return format_ts(self.now())


class FixedClock:
    """Deterministic clock for replay tests.

    ``now()`` returns ``start`` plus ``step`` per previous call. With the default
    ``step=0`` every timestamp is identical, which keeps artifacts byte-stable
    even when a run is interrupted and resumed (call counts differ then).
    ``monotonic()`` follows the same sequence so elapsed-time budgets see no
    progress unless ``step`` is set.
    """

    def __init__(self, start: float = 1_700_000_000.0, step: float = 0.0):
        self.start = start
        self.step = step
        self._calls = 0
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            value = self.start + self.step * self._calls
            self._calls += 1
            return value

    def monotonic(self) -> float:
        return self.now() - self.start

    def iso(self) -> str:
        return format_ts(self.now())


def format_ts(epoch: float) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
