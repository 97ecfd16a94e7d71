"""Injectable time sources.

All services take a clock at construction so expiry, leases, and the
simulated scheduler can be driven deterministically in tests.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Time source interface: ``now()`` returns epoch seconds as float."""

    def now(self) -> float:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> float:
        return time.time()


class ManualClock(Clock):
    """Clock that only moves when told to. Thread-safe."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def set(self, now: float) -> None:
        with self._lock:
            if now < self._now:
                raise ValueError("clock cannot move backwards")
            self._now = now
