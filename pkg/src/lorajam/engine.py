"""Deterministic discrete-event core.

Events are ordered by ``(time, priority, sequence)``; the sequence number is
assigned at scheduling time, so two runs that schedule the same events in the
same order replay identically.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from typing import Any, Callable, Iterable

# lower fires first among events sharing a timestamp
PRIO_END = 0
PRIO_START = 1
PRIO_DEFAULT = 2


class SchedulingInPast(RuntimeError):
    pass


class EventLog:
    """Append-only list of flat records, serialisable as JSON lines."""

    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []

    def append(self, record: dict[str, Any]) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def lines(self) -> Iterable[str]:
        for r in self.records:
            yield json.dumps(r, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")


class Engine:
    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, int, Callable, tuple]] = []
        self._seq = 0
        self.log = EventLog()

    def schedule(self, time: int, callback: Callable, *args, priority: int = PRIO_DEFAULT) -> None:
        if time < self.now:
            raise SchedulingInPast(f"event at {time} us scheduled at {self.now} us")
        heapq.heappush(self._queue, (time, priority, self._seq, callback, args))
        self._seq += 1

    def record(self, kind: str, **fields: Any) -> None:
        rec = {"t": self.now, "kind": kind}
        rec.update(fields)
        self.log.append(rec)

    def pending(self) -> int:
        return len(self._queue)

    def retain(self, keep: Callable[[Callable, tuple], bool]) -> None:
        """Drop every queued event for which ``keep(callback, args)`` is false."""
        self._queue = [e for e in self._queue if keep(e[3], e[4])]
        heapq.heapify(self._queue)

    def run_until(self, t_end: int | None = None) -> EventLog:
        """Process events with ``time <= t_end`` (all of them when ``None``)."""
        q = self._queue
        while q and (t_end is None or q[0][0] <= t_end):
            time, _, _, callback, args = heapq.heappop(q)
            self.now = time
            callback(*args)
        if t_end is not None and t_end > self.now:
            self.now = t_end
        return self.log
