"""Deterministic virtual-clock event scheduler.

All simulated experiments (control loops, channel deliveries, cross-traffic
sources) share one scheduler so that every event executes in global time
order. Time is in milliseconds and advances only when events run, which makes
runs reproducible bit-for-bit and much faster than wall time.
"""

from __future__ import annotations

import heapq
from typing import Callable

# Events at equal timestamps run in priority order; deliveries must become
# visible before a controller check scheduled at the same instant.
PRIO_DELIVERY = 0
PRIO_CONTROL = 1


class SchedulerError(Exception):
    pass


class EventScheduler:
    """Min-heap event loop over virtual milliseconds."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, int, Callable[[], None]]] = []
        self._seq = 0

    def schedule(self, t_ms: float, fn: Callable[[], None], priority: int = PRIO_DELIVERY) -> None:
        if t_ms < self.now:
            raise SchedulerError(f"cannot schedule event in the past ({t_ms} < {self.now})")
        heapq.heappush(self._heap, (t_ms, priority, self._seq, fn))
        self._seq += 1

    def pending(self) -> int:
        return len(self._heap)

    def run(self, stop: Callable[[], bool] | None = None, horizon_ms: float | None = None) -> None:
        """Run events until the heap drains, `stop()` turns true, or the
        next event lies beyond `horizon_ms` (that event stays queued)."""
        while self._heap:
            if stop is not None and stop():
                return
            if horizon_ms is not None and self._heap[0][0] > horizon_ms:
                return
            t, _prio, _seq, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
