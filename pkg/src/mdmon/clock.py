"""Injected millisecond clocks.

No pipeline module reads wall time directly; everything takes a Clock.
ManualClock drives deterministic tests and accelerated simulation, and
its sleep() simply advances logical time. WallClock is constructed only
at process entry points (`mdmon serve`, paced demos).
"""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now_ms(self) -> int: ...

    def sleep_ms(self, ms: float) -> None: ...


class ManualClock:
    """Logical clock; sleep advances time instantly."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def sleep_ms(self, ms: float) -> None:
        if ms > 0:
            self._now += int(ms)

    def advance_to(self, ts_ms: int) -> None:
        if ts_ms > self._now:
            self._now = int(ts_ms)


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep_ms(self, ms: float) -> None:
        if ms > 0:
            time.sleep(ms / 1000.0)


class PacedClock:
    """Maps logical time onto wall time at a speed multiplier.

    sleep_ms(d) advances logical time by d while blocking for d/speed of
    real time, never more: if processing has fallen behind the schedule,
    the blocking part is skipped so the pipeline catches up.
    """

    def __init__(self, speed: float, start_ms: int = 0):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.speed = speed
        self._now = int(start_ms)
        self._wall0 = time.monotonic()
        self._logical0 = self._now

    def now_ms(self) -> int:
        return self._now

    def sleep_ms(self, ms: float) -> None:
        if ms <= 0:
            return
        self._now += int(ms)
        target_wall = self._wall0 + (self._now - self._logical0) / 1000.0 / self.speed
        delay = target_wall - time.monotonic()
        if delay > 0:
            time.sleep(delay)

    def advance_to(self, ts_ms: int) -> None:
        if ts_ms > self._now:
            self.sleep_ms(ts_ms - self._now)
