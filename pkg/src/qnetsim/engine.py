"""Deterministic discrete-event core.

Events execute in (time, insertion-sequence) order, so two runs with the
same schedule are identical.  Simulated time is decoupled from wall time.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False, default="Timer")
    target: str = field(compare=False, default="")
    fn: Callable[[], None] | None = field(compare=False, default=None)
    cancelled: bool = field(compare=False, default=False)

    def cancel(self):
        self.cancelled = True


class Engine:
    """Single-threaded event loop over simulated seconds."""

    def __init__(self):
        self.now = 0.0
        self._seq = 0
        self._heap: list[Event] = []
        self.executed = 0

    def schedule(self, delay_s: float, fn: Callable[[], None], *,
                 kind: str = "Timer", target: str = "") -> Event:
        if delay_s < 0:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        event = Event(time=self.now + delay_s, seq=self._seq, kind=kind, target=target, fn=fn)
        heapq.heappush(self._heap, event)
        return event

    def pending(self) -> int:
        return sum(1 for e in self._heap if not e.cancelled)

    def step(self) -> bool:
        """Execute the next event; returns False when nothing is left."""
        while self._heap:
            event = heapq.heappop(self._heap)
            if event.cancelled:
                continue
            self.now = event.time
            self.executed += 1
            if event.fn is not None:
                event.fn()
            return True
        return False

    def run(self, until: float | None = None) -> None:
        """Drain events, optionally only those at time <= until.

        With a horizon, later events stay queued and `now` advances to the
        horizon so the caller observes a consistent end time.
        """
        while self._heap:
            head = self._heap[0]
            if head.cancelled:
                heapq.heappop(self._heap)
                continue
            if until is not None and head.time > until:
                break
            self.step()
        if until is not None and self.now < until:
            self.now = until
