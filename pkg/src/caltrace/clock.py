"""Injectable time source.

Freshness checks, block timestamps, and generated fixtures all read time
through a ``Clock`` so tests and replays can pin it.
"""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> int: ...


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class FixedClock:
    """Clock frozen at a chosen instant; advance explicitly in tests."""

    def __init__(self, ts: int):
        self._ts = int(ts)

    def now(self) -> int:
        return self._ts

    def advance(self, seconds: int) -> None:
        self._ts += int(seconds)
